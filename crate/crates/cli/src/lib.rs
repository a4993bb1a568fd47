//! Commands behind the `rulesynth` binary: corpus loading, configuration and
//! the synth / check / refine / explain / pdg entry points.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use rulesynth::align::{diff_pdgs, AlignConfig, AlignError};
use rulesynth::eval::{check_rule, prefilter, read_rule, write_rule, Detection, Rule, RuleError};
use rulesynth::frontend::{build_pdg, FrontendError, MethodSource};
use rulesynth::pdg::{Pdg, PdgError};
use rulesynth::refine::{RefineError, RefinementSession};
use rulesynth::synth::{synthesize_rule, SynthConfig, SynthError, SynthReport, SynthesisInput};
use rulesynth::uapdg::QuantifiedConjunct;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DETECTIONS: i32 = 1;
pub const EXIT_SYNTH_FAILED: i32 = 2;
pub const EXIT_INPUT: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Frontend { path: String, source: FrontendError },
    #[error("{path}: {source}")]
    Graph { path: String, source: PdgError },
    #[error("{path}: {source}")]
    Rule { path: String, source: RuleError },
    #[error("{path}: {source}")]
    Config { path: String, source: serde_json::Error },
    #[error("change `{id}`: {source}")]
    Diff { id: String, source: AlignError },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Refine(#[from] RefineError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Synth(SynthError::Fail { .. } | SynthError::Budget(_))
            | CliError::Refine(RefineError::Synth(SynthError::Fail { .. } | SynthError::Budget(_))) => {
                EXIT_SYNTH_FAILED
            }
            _ => EXIT_INPUT,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Optional settings read from `--config`; command-line flags win.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct Settings {
    pub delta: Option<f64>,
    pub max_partitions: Option<usize>,
    pub radius: Option<usize>,
    pub max_model_rounds: Option<usize>,
    pub solver_cap: Option<u64>,
    pub max_pairs: Option<usize>,
    pub dump_ilp: Option<PathBuf>,
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Settings, CliError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| CliError::Config {
            path: path.display().to_string(),
            source,
        })
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overridden_by(self, over: Settings) -> Settings {
        Settings {
            delta: over.delta.or(self.delta),
            max_partitions: over.max_partitions.or(self.max_partitions),
            radius: over.radius.or(self.radius),
            max_model_rounds: over.max_model_rounds.or(self.max_model_rounds),
            solver_cap: over.solver_cap.or(self.solver_cap),
            max_pairs: over.max_pairs.or(self.max_pairs),
            dump_ilp: over.dump_ilp.or(self.dump_ilp),
        }
    }

    pub fn align_config(&self) -> AlignConfig {
        let d = AlignConfig::default();
        AlignConfig {
            max_pairs: self.max_pairs.unwrap_or(d.max_pairs),
            max_search_nodes: self.solver_cap.unwrap_or(d.max_search_nodes),
            dump_dir: self.dump_ilp.clone(),
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        let d = SynthConfig::default();
        SynthConfig {
            delta: self.delta.unwrap_or(d.delta),
            max_partitions_explored: self.max_partitions.unwrap_or(d.max_partitions_explored),
            single_example_radius: self.radius.unwrap_or(d.single_example_radius),
            max_model_rounds: self.max_model_rounds.unwrap_or(d.max_model_rounds),
            align: self.align_config(),
        }
    }
}

/// Loads a `.mj` source through the frontend or a `.pdg` interchange file.
pub fn load_graph(path: &Path) -> Result<Pdg, CliError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("mj") => {
            let src = MethodSource::from_file(path).map_err(|source| CliError::Frontend {
                path: path.display().to_string(),
                source,
            })?;
            build_pdg(&src).map_err(|source| CliError::Frontend {
                path: path.display().to_string(),
                source,
            })
        }
        Some("pdg") | Some("json") => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            Pdg::from_json(&text).map_err(|source| CliError::Graph {
                path: path.display().to_string(),
                source,
            })
        }
        _ => Err(CliError::Usage(format!(
            "{}: expected a `.mj` or `.pdg` file",
            path.display()
        ))),
    }
}

fn is_graph_file(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("mj") | Some("pdg"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<_, _>>()?;
    out.sort();
    Ok(out)
}

/// Every `.mj`/`.pdg` file under `path`, sorted, or `path` itself.
pub fn graph_files(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !path.is_dir() {
        if !path.exists() {
            return Err(CliError::Usage(format!("{}: no such file or directory", path.display())));
        }
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    for p in sorted_entries(path)? {
        if p.is_dir() {
            out.extend(graph_files(&p)?);
        } else if is_graph_file(&p) {
            out.push(p);
        }
    }
    Ok(out)
}

fn graphs_in(dir: &Path) -> Result<Vec<Pdg>, CliError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    sorted_entries(dir)?
        .into_iter()
        .filter(|p| p.is_file() && is_graph_file(p))
        .map(|p| load_graph(&p))
        .collect()
}

/// A corpus directory: `changes/<id>/{before,after}.{mj,pdg}` plus optional
/// `violating/` and `conforming/` example directories.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    /// Change-tagged (before, after) graphs by change id.
    pub changes: Vec<(String, Pdg, Pdg)>,
    pub violating: Vec<Pdg>,
    pub conforming: Vec<Pdg>,
}

fn change_side(dir: &Path, side: &str) -> Result<PathBuf, CliError> {
    ["mj", "pdg"]
        .iter()
        .map(|ext| dir.join(format!("{side}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| CliError::Usage(format!("{}: missing {side}.mj or {side}.pdg", dir.display())))
}

impl Corpus {
    pub fn load(root: &Path, align: &AlignConfig) -> Result<Corpus, CliError> {
        if !root.is_dir() {
            return Err(CliError::Usage(format!("{}: corpus directory not found", root.display())));
        }
        let mut changes = Vec::new();
        let cdir = root.join("changes");
        if cdir.is_dir() {
            for d in sorted_entries(&cdir)?.into_iter().filter(|p| p.is_dir()) {
                let id = d.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let before = load_graph(&change_side(&d, "before")?)?;
                let after = load_graph(&change_side(&d, "after")?)?;
                let (b, a) = diff_pdgs(&before, &after, align).map_err(|source| CliError::Diff {
                    id: id.clone(),
                    source,
                })?;
                changes.push((id, b, a));
            }
        }
        Ok(Corpus {
            root: root.to_path_buf(),
            changes,
            violating: graphs_in(&root.join("violating"))?,
            conforming: graphs_in(&root.join("conforming"))?,
        })
    }

    /// Befores and violating examples against afters and conforming examples.
    pub fn synthesis_input(&self, name: &str, config: SynthConfig) -> SynthesisInput {
        SynthesisInput {
            name: name.to_string(),
            violating: self
                .changes
                .iter()
                .map(|(_, b, _)| b.clone())
                .chain(self.violating.iter().cloned())
                .collect(),
            conforming: self
                .changes
                .iter()
                .map(|(_, _, a)| a.clone())
                .chain(self.conforming.iter().cloned())
                .collect(),
            config,
        }
    }
}

fn rule_name_for(corpus: &Path) -> String {
    corpus
        .canonicalize()
        .ok()
        .as_deref()
        .unwrap_or(corpus)
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "rule".into())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

/// Synthesizes a rule from a corpus and writes it to `out` (and the trace to
/// `report_out` when given). The rule name is the corpus directory name.
pub fn cmd_synth(
    corpus: &Path,
    out: &Path,
    report_out: Option<&Path>,
    settings: &Settings,
) -> Result<(Rule, SynthReport), CliError> {
    let cfg = settings.synth_config();
    let c = Corpus::load(corpus, &cfg.align)?;
    let input = c.synthesis_input(&rule_name_for(corpus), cfg);
    if input.violating.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: no violating examples (add changes/ or violating/)",
            corpus.display()
        )));
    }
    let (rule, report) = synthesize_rule(&input)?;
    write_file(out, &write_rule(&rule))?;
    if let Some(p) = report_out {
        write_file(p, report.to_string().as_bytes())?;
    }
    Ok((rule, report))
}

pub fn load_rule(path: &Path) -> Result<Rule, CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    read_rule(&bytes).map_err(|source| CliError::Rule {
        path: path.display().to_string(),
        source,
    })
}

/// Outcome of checking one rule against a set of files.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CheckOutcome {
    /// In input-file order.
    pub detections: Vec<Detection>,
    pub files: usize,
    /// Files whose graph lacks an API the precondition names.
    pub prefiltered: Vec<PathBuf>,
}

impl CheckOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.detections.is_empty() {
            EXIT_OK
        } else {
            EXIT_DETECTIONS
        }
    }

    pub fn records(&self) -> String {
        self.detections.iter().map(|d| d.to_record() + "\n").collect()
    }
}

enum FileResult {
    Prefiltered,
    Checked(Vec<Detection>),
}

fn check_file(path: &Path, rule: &Rule) -> Result<FileResult, CliError> {
    let g = load_graph(path)?;
    if !prefilter(&g, &rule.pre) {
        return Ok(FileResult::Prefiltered);
    }
    Ok(FileResult::Checked(check_rule(&g, rule)))
}

/// Checks every graph file under `paths`, spread across worker threads;
/// results are merged back in file order.
pub fn cmd_check(rule_path: &Path, paths: &[PathBuf]) -> Result<CheckOutcome, CliError> {
    let rule = load_rule(rule_path)?;
    let mut files = Vec::new();
    for p in paths {
        files.extend(graph_files(p)?);
    }
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(files.len().max(1));
    let chunk = files.len().div_ceil(workers).max(1);
    let results: Vec<Result<FileResult, CliError>> = std::thread::scope(|s| {
        let handles: Vec<_> = files
            .chunks(chunk)
            .map(|part| {
                let rule = &rule;
                s.spawn(move || part.iter().map(|p| check_file(p, rule)).collect::<Vec<_>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("checker thread panicked"))
            .collect()
    });
    let mut out = CheckOutcome {
        files: files.len(),
        ..CheckOutcome::default()
    };
    for (path, r) in files.iter().zip(results) {
        match r? {
            FileResult::Prefiltered => {
                log::info!("{}: prefiltered", path.display());
                out.prefiltered.push(path.clone());
            }
            FileResult::Checked(ds) => {
                log::info!("{}: {} detection(s)", path.display(), ds.len());
                out.detections.extend(ds);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub rule: Rule,
    pub converged: bool,
    pub version: usize,
    pub report: SynthReport,
}

/// Folds `fp` into the session in `session_dir`.
///
/// A session that does not exist yet is started from `init_corpus`.
pub fn cmd_refine(
    session_dir: &Path,
    fp: &Path,
    init_corpus: Option<&Path>,
    settings: &Settings,
) -> Result<RefineOutcome, CliError> {
    let mut session = if session_dir.join("base").is_dir() {
        let mut s = RefinementSession::load(session_dir, settings.align_config())?;
        s.base_input.config = settings.synth_config_over(&s.base_input.config);
        s
    } else {
        let corpus = init_corpus.ok_or_else(|| {
            CliError::Usage(format!(
                "{}: no session here; pass --corpus to start one",
                session_dir.display()
            ))
        })?;
        let cfg = settings.synth_config();
        let c = Corpus::load(corpus, &cfg.align)?;
        let input = c.synthesis_input(&rule_name_for(corpus), cfg);
        if input.violating.is_empty() {
            return Err(CliError::Usage(format!("{}: no violating examples", corpus.display())));
        }
        let (s, _) = RefinementSession::start(input)?;
        s.save(session_dir)?;
        RefinementSession::append_log(session_dir, &format!("started from {}", corpus.display()))?;
        s
    };
    let g = load_graph(fp)?;
    let before = session.history.len();
    let step = match session.refine_step(g) {
        Ok(s) => s,
        Err(e) => {
            RefinementSession::append_log(session_dir, &format!("{}: rejected: {e}", fp.display()))?;
            return Err(e.into());
        }
    };
    session.save(session_dir)?;
    let version = session.history.len() - 1;
    let line = if session.history.len() == before {
        format!("{}: already folded, converged=true", fp.display())
    } else {
        format!("{}: folded as rule {version:03}, converged={}", fp.display(), step.converged)
    };
    RefinementSession::append_log(session_dir, &line)?;
    Ok(RefineOutcome {
        rule: step.rule,
        converged: step.converged,
        version,
        report: step.report,
    })
}

impl Settings {
    /// Like [`Settings::synth_config`], with unset fields taken from `base`.
    pub fn synth_config_over(&self, base: &SynthConfig) -> SynthConfig {
        SynthConfig {
            delta: self.delta.unwrap_or(base.delta),
            max_partitions_explored: self.max_partitions.unwrap_or(base.max_partitions_explored),
            single_example_radius: self.radius.unwrap_or(base.single_example_radius),
            max_model_rounds: self.max_model_rounds.unwrap_or(base.max_model_rounds),
            align: AlignConfig {
                max_pairs: self.max_pairs.unwrap_or(base.align.max_pairs),
                max_search_nodes: self.solver_cap.unwrap_or(base.align.max_search_nodes),
                dump_dir: self.dump_ilp.clone().or_else(|| base.align.dump_dir.clone()),
            },
        }
    }
}

fn describe_conjunct(out: &mut String, q: &QuantifiedConjunct) {
    for v in q.all_vars() {
        let atoms = q.node_atoms[v].atoms(v);
        if atoms.is_empty() {
            let _ = writeln!(out, "    node {v}: any");
        } else {
            let _ = writeln!(out, "    node {v}: {}", atoms.join(", "));
        }
    }
    for e in &q.edge_atoms {
        let _ = writeln!(out, "    edge {} -{}-> {}", e.src, e.label, e.dst);
    }
}

/// Renders a rule as formulas plus a node and edge listing per conjunct.
pub fn explain(rule: &Rule) -> String {
    let mut out = String::new();
    let free = rule.pre.free_vars.join(", ");
    let _ = writeln!(out, "rule {}", rule.name);
    let _ = writeln!(out, "R = ∃ {free}. pre({free}) ∧ ¬post({free})");
    let _ = writeln!(out, "precondition: {}", rule.pre);
    describe_conjunct(&mut out, &rule.pre);
    if rule.post.is_empty() {
        let _ = writeln!(out, "postcondition: False");
    } else {
        let _ = writeln!(out, "postcondition: {} disjunct(s)", rule.post.len());
        for (k, q) in rule.post.iter().enumerate() {
            let _ = writeln!(out, "post_{} ({} nodes): {q}", k + 1, q.node_atoms.len());
            describe_conjunct(&mut out, q);
        }
    }
    if !rule.provenance.history.is_empty() {
        let _ = writeln!(out, "history:");
        for h in &rule.provenance.history {
            let _ = writeln!(out, "  {h}");
        }
    }
    out
}

pub fn cmd_explain(rule_path: &Path) -> Result<String, CliError> {
    Ok(explain(&load_rule(rule_path)?))
}

/// Interchange JSON of one `.mj` file.
pub fn cmd_pdg(file: &Path) -> Result<String, CliError> {
    Ok(load_graph(file)?.to_json())
}
