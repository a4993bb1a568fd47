//! Iterative refinement: labeled false positives are folded into the
//! conforming set and the rule is resynthesized until it stops changing.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::AlignConfig;
use crate::eval::{check_rule, read_rule, write_rule, Provenance, Rule, RuleError};
use crate::lattice::NodePredicates;
use crate::pdg::{Pdg, PdgError};
use crate::synth::{synthesize_rule, SynthConfig, SynthError, SynthReport, SynthesisInput};
use crate::uapdg::{EdgeAtom, QuantifiedConjunct};

#[derive(Debug, Error)]
pub enum RefineError {
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("not a detection: the current rule does not flag {0}")]
    NotADetection(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Graph { path: String, source: PdgError },
    #[error("{path}: {source}")]
    Rule { path: String, source: RuleError },
    #[error("invalid session: {0}")]
    Session(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RefineError + '_ {
    move |source| RefineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Orders a conjunct's atoms after renaming its bound variables.
type ConjunctKey = (Vec<(String, NodePredicates)>, Vec<EdgeAtom>);

fn key_of(q: &QuantifiedConjunct) -> ConjunctKey {
    (
        q.node_atoms.iter().map(|(k, p)| (k.clone(), p.clone())).collect(),
        q.edge_atoms.iter().cloned().collect(),
    )
}

fn rename(q: &QuantifiedConjunct, names: &BTreeMap<String, String>) -> QuantifiedConjunct {
    let r = |v: &String| names.get(v).cloned().unwrap_or_else(|| v.clone());
    let mut bound: Vec<String> = q.bound_vars.iter().map(r).collect();
    bound.sort_by_key(|v| v[1..].parse::<usize>().unwrap_or(usize::MAX));
    QuantifiedConjunct {
        free_vars: q.free_vars.clone(),
        bound_vars: bound,
        node_atoms: q.node_atoms.iter().map(|(k, p)| (r(k), p.clone())).collect(),
        edge_atoms: q
            .edge_atoms
            .iter()
            .map(|e| EdgeAtom {
                src: r(&e.src),
                label: e.label,
                dst: r(&e.dst),
            })
            .collect(),
    }
}

/// Upper bound on tie-breaking permutations tried per conjunct.
const MAX_TIE_PERMUTATIONS: usize = 40_320;

/// Renames bound variables to `y0..` in an order that does not depend on
/// their original names.
///
/// Variables are ranked by iterated neighborhood colors; remaining ties are
/// broken by picking the smallest renamed conjunct over all tie orders, as
/// long as there are at most [`MAX_TIE_PERMUTATIONS`] of them.
pub fn canonical_conjunct(q: &QuantifiedConjunct) -> QuantifiedConjunct {
    let bound = &q.bound_vars;
    if bound.is_empty() {
        return q.clone();
    }
    let idx: BTreeMap<&str, usize> = bound.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let top = NodePredicates::top();
    let mut color: Vec<String> = bound
        .iter()
        .map(|v| format!("{:?}", q.node_atoms.get(v).unwrap_or(&top)))
        .collect();
    let endpoint = |v: &str, color: &[String]| match idx.get(v) {
        Some(&i) => format!("b:{}", color[i]),
        None => format!("f:{v}"),
    };
    for _ in 0..bound.len() {
        let mut next = Vec::with_capacity(bound.len());
        for (i, v) in bound.iter().enumerate() {
            let mut sig: Vec<String> = q
                .edge_atoms
                .iter()
                .filter_map(|e| {
                    if e.src == *v {
                        Some(format!("out {} {}", e.label, endpoint(&e.dst, &color)))
                    } else if e.dst == *v {
                        Some(format!("in {} {}", e.label, endpoint(&e.src, &color)))
                    } else {
                        None
                    }
                })
                .collect();
            sig.sort();
            next.push(format!("{}|{}", color[i], sig.join(";")));
        }
        // Compress to ranks so the strings stay short.
        let mut sorted = next.clone();
        sorted.sort();
        sorted.dedup();
        let ranked: Vec<String> = next
            .iter()
            .map(|s| format!("{:04}", sorted.binary_search(s).unwrap_or(0)))
            .collect();
        let stable = classes(&ranked) == classes(&color);
        color = ranked;
        if stable {
            break;
        }
    }

    // Tie classes in color order.
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in color.iter().enumerate() {
        groups.entry(c.as_str()).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();
    let total = groups
        .iter()
        .try_fold(1usize, |acc, g| acc.checked_mul(factorial(g.len())?))
        .unwrap_or(usize::MAX);

    let build = |order: &[usize]| {
        let names: BTreeMap<String, String> = order
            .iter()
            .enumerate()
            .map(|(k, &i)| (bound[i].clone(), format!("y{k}")))
            .collect();
        rename(q, &names)
    };
    if total > MAX_TIE_PERMUTATIONS {
        let order: Vec<usize> = groups.concat();
        return build(&order);
    }
    let mut best: Option<(ConjunctKey, QuantifiedConjunct)> = None;
    let mut current: Vec<Vec<usize>> = groups.clone();
    enumerate_orders(&mut current, 0, &mut |gs| {
        let cand = build(&gs.concat());
        let k = key_of(&cand);
        if best.as_ref().map_or(true, |(b, _)| k < *b) {
            best = Some((k, cand));
        }
    });
    best.map(|(_, q)| q).unwrap_or_else(|| q.clone())
}

fn classes(colors: &[String]) -> Vec<usize> {
    let mut seen: Vec<&String> = Vec::new();
    colors
        .iter()
        .map(|c| match seen.iter().position(|s| *s == c) {
            Some(p) => p,
            None => {
                seen.push(c);
                seen.len() - 1
            }
        })
        .collect()
}

fn factorial(n: usize) -> Option<usize> {
    (1..=n).try_fold(1usize, |a, k| a.checked_mul(k))
}

fn enumerate_orders(groups: &mut Vec<Vec<usize>>, g: usize, visit: &mut dyn FnMut(&[Vec<usize>])) {
    if g == groups.len() {
        visit(groups);
        return;
    }
    permute(groups, g, 0, visit);
}

fn permute(groups: &mut Vec<Vec<usize>>, g: usize, k: usize, visit: &mut dyn FnMut(&[Vec<usize>])) {
    let n = groups[g].len();
    if k == n {
        enumerate_orders(groups, g + 1, visit);
        return;
    }
    for i in k..n {
        groups[g].swap(k, i);
        permute(groups, g, k + 1, visit);
        groups[g].swap(k, i);
    }
}

/// The rule with canonical bound variables, disjuncts sorted by node count
/// and then by content, and no provenance.
pub fn canonical_form(r: &Rule) -> Rule {
    let mut post: Vec<QuantifiedConjunct> = r.post.iter().map(canonical_conjunct).collect();
    post.sort_by_cached_key(|q| (q.node_atoms.len(), key_of(q)));
    post.dedup();
    Rule {
        name: r.name.clone(),
        pre: r.pre.clone(),
        post,
        provenance: Provenance::default(),
    }
}

/// Serialized [`canonical_form`]; two rules are treated as equivalent when
/// these bytes agree.
pub fn canonical_rule(r: &Rule) -> Vec<u8> {
    write_rule(&canonical_form(r))
}

/// One rule version and the fp (index into `fp_examples`) that produced it.
#[derive(Debug, Clone)]
pub struct RuleVersion {
    pub rule: Rule,
    pub trigger: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RefinementSession {
    pub base_input: SynthesisInput,
    pub fp_examples: Vec<Pdg>,
    pub history: Vec<RuleVersion>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub rule: Rule,
    pub converged: bool,
    pub report: SynthReport,
}

fn same_graph(a: &Pdg, b: &Pdg) -> bool {
    a.nodes == b.nodes && a.edges == b.edges
}

fn describe(g: &Pdg) -> String {
    g.origin
        .as_ref()
        .map(|o| o.to_string())
        .unwrap_or_else(|| "<unnamed graph>".into())
}

impl RefinementSession {
    /// Synthesizes the base rule.
    pub fn start(base_input: SynthesisInput) -> Result<(Self, SynthReport), RefineError> {
        let (rule, report) = synthesize_rule(&base_input)?;
        Ok((
            RefinementSession {
                base_input,
                fp_examples: Vec::new(),
                history: vec![RuleVersion { rule, trigger: None }],
            },
            report,
        ))
    }

    pub fn current(&self) -> &Rule {
        &self.history.last().expect("a session always has a base rule").rule
    }

    /// Folds one false positive and resynthesizes.
    ///
    /// An fp that was already folded leaves the session unchanged and reports
    /// convergence. On synthesis failure the session is left as it was.
    pub fn refine_step(&mut self, fp: Pdg) -> Result<StepOutcome, RefineError> {
        if self.fp_examples.iter().any(|g| same_graph(g, &fp)) {
            return Ok(StepOutcome {
                rule: self.current().clone(),
                converged: true,
                report: SynthReport {
                    lines: vec![format!("{} was already folded; nothing to do", describe(&fp))],
                },
            });
        }
        if check_rule(&fp, self.current()).is_empty() {
            return Err(RefineError::NotADetection(describe(&fp)));
        }
        let mut input = self.base_input.clone();
        input.conforming.extend(self.fp_examples.iter().cloned());
        input.conforming.push(fp.clone());
        let (mut rule, report) = synthesize_rule(&input)?;
        let converged = canonical_rule(&rule) == canonical_rule(self.current());
        let step = self.fp_examples.len() + 1;
        rule.provenance.history = self.current().provenance.history.clone();
        rule.provenance
            .history
            .push(format!("refinement step {step}: folded fp {}", describe(&fp)));
        self.fp_examples.push(fp);
        self.history.push(RuleVersion {
            rule: rule.clone(),
            trigger: Some(step - 1),
        });
        Ok(StepOutcome { rule, converged, report })
    }
}

/// Summary of [`refine_until_stable`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Convergence {
    pub steps: usize,
    pub converged: bool,
    /// Pool indices in folding order.
    pub folded: Vec<usize>,
}

/// Repeatedly folds the first pool graph the current rule still flags.
///
/// Stops when a fold leaves the rule unchanged, when no pool graph is
/// flagged any more (both count as converged), or after `max_steps` folds.
pub fn refine_until_stable(
    session: &mut RefinementSession,
    pool: &[Pdg],
    max_steps: usize,
) -> Result<Convergence, RefineError> {
    let mut folded = Vec::new();
    loop {
        let next = pool
            .iter()
            .enumerate()
            .find(|(i, g)| !folded.contains(i) && !check_rule(g, session.current()).is_empty());
        let Some((i, g)) = next else {
            return Ok(Convergence {
                steps: folded.len(),
                converged: true,
                folded,
            });
        };
        if folded.len() == max_steps {
            return Ok(Convergence {
                steps: folded.len(),
                converged: false,
                folded,
            });
        }
        let out = session.refine_step(g.clone())?;
        folded.push(i);
        log::info!("refinement step {}: folded pool graph {i}, converged={}", folded.len(), out.converged);
        if out.converged {
            return Ok(Convergence {
                steps: folded.len(),
                converged: true,
                folded,
            });
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
struct SessionConfig {
    name: String,
    delta: f64,
    max_partitions_explored: usize,
    single_example_radius: usize,
    max_model_rounds: usize,
    max_pairs: usize,
    max_search_nodes: u64,
}

fn numbered(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, RefineError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(ext))
        .collect();
    out.sort();
    Ok(out)
}

fn read_pdg(path: &Path) -> Result<Pdg, RefineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Pdg::from_json(&text).map_err(|source| RefineError::Graph {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RefineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

impl RefinementSession {
    /// Writes `base/`, `fps/NNN.pdg` and `rules/NNN.rule` under `dir`.
    /// Files already present with the same name are overwritten.
    pub fn save(&self, dir: &Path) -> Result<(), RefineError> {
        let cfg = &self.base_input.config;
        let sc = SessionConfig {
            name: self.base_input.name.clone(),
            delta: cfg.delta,
            max_partitions_explored: cfg.max_partitions_explored,
            single_example_radius: cfg.single_example_radius,
            max_model_rounds: cfg.max_model_rounds,
            max_pairs: cfg.align.max_pairs,
            max_search_nodes: cfg.align.max_search_nodes,
        };
        let mut text = serde_json::to_string_pretty(&sc).expect("config serialization cannot fail");
        text.push('\n');
        write_file(&dir.join("base/config.json"), text.as_bytes())?;
        for (sub, graphs) in [
            ("violating", &self.base_input.violating),
            ("conforming", &self.base_input.conforming),
        ] {
            for (k, g) in graphs.iter().enumerate() {
                write_file(&dir.join(format!("base/{sub}/{k:03}.pdg")), g.to_json().as_bytes())?;
            }
        }
        for (k, g) in self.fp_examples.iter().enumerate() {
            write_file(&dir.join(format!("fps/{:03}.pdg", k + 1)), g.to_json().as_bytes())?;
        }
        for (k, v) in self.history.iter().enumerate() {
            write_file(&dir.join(format!("rules/{k:03}.rule")), &write_rule(&v.rule))?;
        }
        Ok(())
    }

    /// Reads a session written by [`RefinementSession::save`]. Alignment
    /// settings that are not persisted (the LP dump directory) come from
    /// `align`.
    pub fn load(dir: &Path, align: AlignConfig) -> Result<Self, RefineError> {
        let cfg_path = dir.join("base/config.json");
        let text = fs::read_to_string(&cfg_path).map_err(io_err(&cfg_path))?;
        let sc: SessionConfig = serde_json::from_str(&text)
            .map_err(|e| RefineError::Session(format!("{}: {e}", cfg_path.display())))?;
        let config = SynthConfig {
            delta: sc.delta,
            max_partitions_explored: sc.max_partitions_explored,
            single_example_radius: sc.single_example_radius,
            max_model_rounds: sc.max_model_rounds,
            align: AlignConfig {
                max_pairs: sc.max_pairs,
                max_search_nodes: sc.max_search_nodes,
                ..align
            },
        };
        let load_all = |sub: &str| -> Result<Vec<Pdg>, RefineError> {
            numbered(&dir.join(sub), "pdg")?.iter().map(|p| read_pdg(p)).collect()
        };
        let base_input = SynthesisInput {
            name: sc.name,
            violating: load_all("base/violating")?,
            conforming: load_all("base/conforming")?,
            config,
        };
        let fp_examples = load_all("fps")?;
        let mut history = Vec::new();
        for (k, p) in numbered(&dir.join("rules"), "rule")?.iter().enumerate() {
            let bytes = fs::read(p).map_err(io_err(p))?;
            let rule = read_rule(&bytes).map_err(|source| RefineError::Rule {
                path: p.display().to_string(),
                source,
            })?;
            history.push(RuleVersion {
                rule,
                trigger: k.checked_sub(1),
            });
        }
        if history.len() != fp_examples.len() + 1 {
            return Err(RefineError::Session(format!(
                "{} rule version(s) for {} fp(s); expected one more rule than fps",
                history.len(),
                fp_examples.len()
            )));
        }
        Ok(RefinementSession {
            base_input,
            fp_examples,
            history,
        })
    }

    /// Appends a line to `log.txt` under `dir`.
    pub fn append_log(dir: &Path, line: &str) -> Result<(), RefineError> {
        let path = dir.join("log.txt");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        writeln!(f, "{line}").map_err(io_err(&path))
    }
}
