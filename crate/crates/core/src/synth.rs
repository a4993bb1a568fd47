//! Rule synthesis from violating and conforming examples.
//!
//! The precondition is the part shared by all violating examples. The
//! postcondition is a disjunction of conjuncts, one per group of conforming
//! examples; groups are split by entropy until no violating example satisfies
//! any disjunct.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::align::{self, AlignConfig, Mode};
use crate::eval::{all_matches, match_in, post_holds, violations, Provenance, Rule, Target, Valuation, MAX_MODELS};
use crate::frontend::is_change_tagged;
use crate::pdg::{Origin, Pdg};
use crate::uapdg::{merge, project, to_formula, QuantifiedConjunct, Uapdg, UapdgError, Vpdg};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Entropy margin, in nats, for keeping candidate splits.
    pub delta: f64,
    pub max_partitions_explored: usize,
    /// Neighborhood kept around frozen nodes when a group has one example.
    pub single_example_radius: usize,
    /// Extra rounds that add uncovered conforming precondition models.
    pub max_model_rounds: usize,
    pub align: AlignConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            delta: 0.05,
            max_partitions_explored: 64,
            single_example_radius: 1,
            max_model_rounds: 8,
            align: AlignConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisInput {
    pub name: String,
    pub violating: Vec<Pdg>,
    pub conforming: Vec<Pdg>,
    pub config: SynthConfig,
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no violating examples")]
    NoViolating,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] UapdgError),
    #[error("synthesis failed: {reason}{}", origin_suffix(.origin))]
    Fail { reason: String, origin: Option<Origin> },
    #[error("explored {0} partitions without separating the examples")]
    Budget(usize),
}

fn origin_suffix(o: &Option<Origin>) -> String {
    o.as_ref().map(|o| format!(" (at {o})")).unwrap_or_default()
}

fn fail(reason: impl Into<String>, origin: Option<Origin>) -> SynthError {
    SynthError::Fail {
        reason: reason.into(),
        origin,
    }
}

/// Human-readable trace of one synthesis run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynthReport {
    pub lines: Vec<String>,
}

impl SynthReport {
    pub fn log(&mut self, line: impl Into<String>) {
        let line = line.into();
        log::debug!("{line}");
        self.lines.push(line);
    }
}

impl fmt::Display for SynthReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

/// Result of merging a group of valuated examples.
#[derive(Debug, Clone)]
pub struct Subrule {
    pub formula: QuantifiedConjunct,
    /// Each input with every kept node valuated by its variable.
    pub revaluated: Vec<Vpdg>,
    pub merged: Uapdg,
    pub core: Uapdg,
}

fn fold_merge(examples: &[Vpdg], mode: Mode, cfg: &AlignConfig, report: &mut SynthReport) -> Result<Uapdg, SynthError> {
    let mut acc = Uapdg::from_vpdg(&examples[0], 0);
    for (k, v) in examples.iter().enumerate().skip(1) {
        let next = Uapdg::from_vpdg(v, k);
        let p = acc.alignment_problem(&next, mode);
        let al = align::align(&p, cfg).map_err(UapdgError::from)?;
        report.log(format!(
            "  align #{k}: {} x {} nodes, objective {} ({} nodes, {} edges)",
            acc.nodes.len(),
            next.nodes.len(),
            al.objective,
            al.node_map.len(),
            al.edge_map.len()
        ));
        acc = merge(&acc, &next, &al)?;
    }
    Ok(acc)
}

fn subrule_mode(examples: &[Vpdg]) -> Mode {
    let no_free = examples.iter().all(|v| v.valuation.is_empty());
    if no_free && examples.iter().all(|v| is_change_tagged(&v.graph)) {
        Mode::Precondition
    } else {
        Mode::Postcondition
    }
}

/// Merges the examples, keeps what all of them share, and reads it as a conjunct.
///
/// A lone example with frozen nodes keeps only the nodes within
/// `single_example_radius` of them.
pub fn get_conjunctive_subrule(
    examples: &[Vpdg],
    cfg: &SynthConfig,
    report: &mut SynthReport,
) -> Result<Subrule, SynthError> {
    if examples.is_empty() {
        return Err(SynthError::Config("no examples to merge".into()));
    }
    let mode = subrule_mode(examples);
    let merged = fold_merge(examples, mode, &cfg.align, report)?;
    let all: BTreeSet<usize> = (0..examples.len()).collect();
    let core = if examples.len() == 1 && !merged.free.is_empty() {
        let keep = merged.near_frozen(cfg.single_example_radius);
        merged.induced(&keep, |_| true)
    } else {
        project(&merged, &all)?
    };
    let core = drop_isolated_data(&core);
    report.log(format!(
        "  merged {} example(s) in {:?} mode: {} nodes, {} shared",
        examples.len(),
        mode,
        merged.nodes.len(),
        core.nodes.len()
    ));
    let revaluated = examples
        .iter()
        .enumerate()
        .map(|(k, v)| Vpdg {
            graph: v.graph.clone(),
            valuation: core.valuation_for(k),
        })
        .collect();
    Ok(Subrule {
        formula: to_formula(&core),
        revaluated,
        merged,
        core,
    })
}

/// Removes bound data nodes left without any edge: they carry no
/// dependence and would only assert that some value exists.
fn drop_isolated_data(core: &Uapdg) -> Uapdg {
    let mut touched = vec![false; core.nodes.len()];
    for e in &core.edges {
        touched[e.src] = true;
        touched[e.dst] = true;
    }
    let keep: Vec<bool> = core
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| touched[i] || core.free.contains_key(&i) || n.preds.is_action())
        .collect();
    core.induced(&keep, |_| true)
}

fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.ln() };
    term(p) + term(1.0 - p)
}

/// Sum over merged nodes of the presence entropy within `subset`.
pub fn group_entropy(merged: &Uapdg, subset: &BTreeSet<usize>) -> f64 {
    if subset.is_empty() {
        return 0.0;
    }
    let size = subset.len() as f64;
    merged
        .nodes
        .iter()
        .map(|n| {
            let hits = subset.iter().filter(|s| n.members.contains_key(s)).count();
            binary_entropy(hits as f64 / size)
        })
        .sum()
}

/// Weighted entropy of splitting `sources` by presence of merged node `split`.
pub fn compute_entropy(sources: &BTreeSet<usize>, merged: &Uapdg, split: usize) -> f64 {
    let with: BTreeSet<usize> = sources
        .iter()
        .copied()
        .filter(|s| merged.nodes[split].members.contains_key(s))
        .collect();
    let without: BTreeSet<usize> = sources.difference(&with).copied().collect();
    let total = sources.len() as f64;
    with.len() as f64 / total * group_entropy(merged, &with)
        + without.len() as f64 / total * group_entropy(merged, &without)
}

/// Binary splits of `examples` (as index lists) on low-entropy nodes next to
/// the shared core, ordered by entropy then node position.
pub fn candidate_partitions(
    sub: &Subrule,
    n_examples: usize,
    delta: f64,
    report: &mut SynthReport,
) -> Vec<(Vec<usize>, Vec<usize>)> {
    let merged = &sub.merged;
    let all: BTreeSet<usize> = (0..n_examples).collect();
    let in_core: Vec<bool> = merged.nodes.iter().map(|n| n.presence() == all).collect();
    let mut candidates = BTreeSet::new();
    for e in &merged.edges {
        for (a, b) in [(e.src, e.dst), (e.dst, e.src)] {
            if in_core[a] && !in_core[b] && merged.nodes[b].preds.is_action() {
                candidates.insert(b);
            }
        }
    }
    let mut scored: Vec<(f64, usize)> = candidates
        .into_iter()
        .map(|n| (compute_entropy(&all, merged, n), n))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let Some(&(min, _)) = scored.first() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for &(h, n) in &scored {
        let label = merged.nodes[n].preds.exact_label().unwrap_or("?");
        let keep = h < min + delta || h == min;
        report.log(format!(
            "  split on {} ({label}): H = {h:.4}{}",
            merged.var_of(n),
            if keep { "" } else { " (outside margin)" }
        ));
        if !keep {
            continue;
        }
        let with: Vec<usize> = (0..n_examples).filter(|s| merged.nodes[n].members.contains_key(s)).collect();
        let without: Vec<usize> = (0..n_examples).filter(|s| !merged.nodes[n].members.contains_key(s)).collect();
        if seen.insert(with.clone()) {
            out.push((with, without));
        }
    }
    out
}

pub fn generate_candidate_partitions(
    examples: &[Vpdg],
    cfg: &SynthConfig,
    report: &mut SynthReport,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>, SynthError> {
    let sub = get_conjunctive_subrule(examples, cfg, report)?;
    Ok(candidate_partitions(&sub, examples.len(), cfg.delta, report))
}

type Partition = Vec<Vec<usize>>;

fn rename_post(q: &QuantifiedConjunct, pre_order: &[String]) -> QuantifiedConjunct {
    let mut out = q.clone();
    let renames: BTreeMap<String, String> = q
        .bound_vars
        .iter()
        .enumerate()
        .map(|(k, v)| (v.clone(), format!("y{k}")))
        .collect();
    let rn = |v: &String| renames.get(v).cloned().unwrap_or_else(|| v.clone());
    out.free_vars = pre_order.iter().filter(|v| q.free_vars.contains(v)).cloned().collect();
    out.bound_vars = q.bound_vars.iter().map(rn).collect();
    out.node_atoms = q.node_atoms.iter().map(|(k, p)| (rn(k), p.clone())).collect();
    out.edge_atoms = q
        .edge_atoms
        .iter()
        .map(|e| crate::uapdg::EdgeAtom {
            src: rn(&e.src),
            label: e.label,
            dst: rn(&e.dst),
        })
        .collect();
    out
}

/// Searches partitions of the conforming examples breadth first until every
/// disjunct rejects every violating example.
pub fn synthesize_pc(
    violating: &[Vpdg],
    conforming: &[Vpdg],
    pre_order: &[String],
    cfg: &SynthConfig,
    report: &mut SynthReport,
) -> Result<Vec<QuantifiedConjunct>, SynthError> {
    if conforming.is_empty() {
        report.log("postcondition: no conforming example satisfies the precondition; post = False");
        return Ok(Vec::new());
    }
    let targets: Vec<Target<'_>> = violating.iter().map(|v| Target::new(&v.graph)).collect();
    let pins: Vec<Valuation> = violating
        .iter()
        .map(|v| v.valuation.iter().map(|(id, x)| (x.clone(), id.clone())).collect())
        .collect();
    let mut memo: HashMap<Vec<usize>, Subrule> = HashMap::new();
    let mut queue: VecDeque<Partition> = VecDeque::from([vec![(0..conforming.len()).collect()]]);
    let mut seen: BTreeSet<Partition> = BTreeSet::new();
    let mut explored = 0;
    let mut dead_ends = 0;
    while let Some(partition) = queue.pop_front() {
        explored += 1;
        if explored > cfg.max_partitions_explored {
            return Err(SynthError::Budget(cfg.max_partitions_explored));
        }
        report.log(format!("partition #{explored}: {partition:?}"));
        let mut disjuncts = Vec::new();
        for group in &partition {
            if !memo.contains_key(group) {
                let members: Vec<Vpdg> = group.iter().map(|&i| conforming[i].clone()).collect();
                let sub = get_conjunctive_subrule(&members, cfg, report)?;
                memo.insert(group.clone(), sub);
            }
            disjuncts.push(rename_post(&memo[group].formula, pre_order));
        }
        let hit = (0..violating.len())
            .find_map(|v| disjuncts.iter().position(|q| post_holds(&targets[v], q, &pins[v])).map(|i| (v, i)));
        let Some((v, i)) = hit else {
            for (group, q) in partition.iter().zip(&disjuncts) {
                report.log(format!("  accepted group {group:?}: {} node(s)", q.node_atoms.len()));
            }
            return Ok(disjuncts);
        };
        let group = &partition[i];
        report.log(format!(
            "  violating example {v} satisfies the disjunct of group {group:?}"
        ));
        if group.len() == 1 {
            report.log("  group cannot be split further; partition abandoned");
            dead_ends += 1;
            continue;
        }
        let sub = &memo[group];
        for (l, r) in candidate_partitions(sub, group.len(), cfg.delta, report) {
            let mut next: Partition = Vec::with_capacity(partition.len() + 1);
            next.extend(partition[..i].iter().cloned());
            next.push(l.iter().map(|&k| group[k]).collect());
            next.push(r.iter().map(|&k| group[k]).collect());
            next.extend(partition[i + 1..].iter().cloned());
            let mut key = next.clone();
            key.sort();
            if seen.insert(key) {
                queue.push_back(next);
            }
        }
    }
    let origin = violating.first().and_then(|v| v.graph.origin.clone());
    Err(fail(
        format!("no partition of the conforming examples rejects every violating example ({dead_ends} dead end(s))"),
        origin,
    ))
}

/// Synthesizes a rule that fires on every violating example and on no
/// conforming one.
pub fn synthesize_rule(input: &SynthesisInput) -> Result<(Rule, SynthReport), SynthError> {
    let cfg = &input.config;
    if input.violating.is_empty() {
        return Err(SynthError::NoViolating);
    }
    if !(cfg.delta >= 0.0) {
        return Err(SynthError::Config(format!("delta must be non-negative, got {}", cfg.delta)));
    }
    if cfg.max_partitions_explored == 0 || cfg.single_example_radius == 0 {
        return Err(SynthError::Config("budgets and radius must be positive".into()));
    }
    let mut report = SynthReport::default();
    report.log(format!(
        "synthesizing `{}` from {} violating and {} conforming example(s)",
        input.name,
        input.violating.len(),
        input.conforming.len()
    ));

    report.log("precondition:");
    let vs: Vec<Vpdg> = input.violating.iter().cloned().map(Vpdg::unvaluated).collect();
    let sub = get_conjunctive_subrule(&vs, cfg, &mut report)?;
    let mut core = sub.core.clone();
    core.free = core.bound.iter().enumerate().map(|(k, (&i, _))| (i, format!("x{k}"))).collect();
    core.bound.clear();
    let pre = to_formula(&core);
    let pre_order = pre.free_vars.clone();
    report.log(format!("pre({}) := {pre}", pre_order.join(", ")));
    let violating: Vec<Vpdg> = vs
        .iter()
        .enumerate()
        .map(|(k, v)| Vpdg {
            graph: v.graph.clone(),
            valuation: core.valuation_for(k),
        })
        .collect();

    let mut conforming: Vec<Vpdg> = Vec::new();
    for c in &input.conforming {
        if let Some(m) = match_in(&Target::new(c), &pre, &Valuation::new()) {
            conforming.push(Vpdg {
                graph: c.clone(),
                valuation: m.into_iter().map(|(x, id)| (id, x)).collect(),
            });
        }
    }
    report.log(format!(
        "{} of {} conforming example(s) satisfy the precondition",
        conforming.len(),
        input.conforming.len()
    ));

    let mut post;
    let mut round = 0;
    loop {
        report.log("postcondition:");
        post = synthesize_pc(&violating, &conforming, &pre_order, cfg, &mut report)?;
        let uncovered = uncovered_models(&input.conforming, &pre, &post);
        if uncovered.is_empty() {
            break;
        }
        round += 1;
        if round > cfg.max_model_rounds {
            return Err(fail(
                "conforming examples keep exposing precondition models the postcondition misses",
                input.conforming[uncovered[0].0].origin.clone(),
            ));
        }
        report.log(format!(
            "{} further precondition model(s) of conforming examples are not covered; adding them",
            uncovered.len()
        ));
        for (k, m) in uncovered {
            conforming.push(Vpdg {
                graph: input.conforming[k].clone(),
                valuation: m.into_iter().map(|(x, id)| (id, x)).collect(),
            });
        }
    }

    let rule = Rule {
        name: input.name.clone(),
        pre,
        post,
        provenance: Provenance {
            examples: input
                .violating
                .iter()
                .map(|g| format!("violating {}", describe(g)))
                .chain(input.conforming.iter().map(|g| format!("conforming {}", describe(g))))
                .collect(),
            history: vec![format!(
                "synthesized with delta={} max_partitions_explored={} single_example_radius={}",
                cfg.delta, cfg.max_partitions_explored, cfg.single_example_radius
            )],
        },
    };
    for (k, v) in violating.iter().enumerate() {
        if violations(&Target::new(&v.graph), &rule).is_empty() {
            return Err(fail(
                format!("violating example {k} does not satisfy the synthesized rule"),
                v.graph.origin.clone(),
            ));
        }
    }
    report.log(format!("final rule:\n{rule}"));
    Ok((rule, report))
}

fn describe(g: &Pdg) -> String {
    g.origin.as_ref().map_or_else(|| "<unknown>".to_string(), |o| o.to_string())
}

/// Conforming precondition models that no disjunct covers, with the example index.
fn uncovered_models(conforming: &[Pdg], pre: &QuantifiedConjunct, post: &[QuantifiedConjunct]) -> Vec<(usize, Valuation)> {
    let mut out = Vec::new();
    for (k, g) in conforming.iter().enumerate() {
        let t = Target::new(g);
        for m in all_matches(&t, pre, MAX_MODELS) {
            if !post.iter().any(|q| post_holds(&t, q, &m)) {
                out.push((k, m));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{build_pdg, MethodSource};

    fn pdg(src: &str) -> Pdg {
        build_pdg(&MethodSource::new("t.mj", src)).unwrap()
    }

    fn uapdg_with_presence(n_sources: usize, presence: &[&[usize]]) -> Uapdg {
        let mut a = Uapdg::default();
        for (i, p) in presence.iter().enumerate() {
            a.nodes.push(crate::uapdg::UNode {
                preds: crate::lattice::NodePredicates::top(),
                tag: crate::pdg::ChangeTag::None,
                members: p.iter().map(|&s| (s, format!("n{i}"))).collect(),
            });
            a.bound.insert(i, format!("b{i}"));
        }
        assert!(presence.iter().all(|p| p.iter().all(|&s| s < n_sources)));
        a
    }

    #[test]
    fn entropy_of_a_worked_example() {
        // n in {0, 1}, m in {0}, a third node everywhere.
        let a = uapdg_with_presence(3, &[&[0, 1], &[0], &[0, 1, 2]]);
        let all = BTreeSet::from([0, 1, 2]);
        let h = compute_entropy(&all, &a, 0);
        assert!((h - 2.0 / 3.0 * std::f64::consts::LN_2).abs() < 1e-12, "{h}");
        assert!((h - 0.4621).abs() < 1e-4);
    }

    #[test]
    fn node_present_everywhere_adds_nothing() {
        let a = uapdg_with_presence(2, &[&[0, 1]]);
        assert_eq!(group_entropy(&a, &BTreeSet::from([0, 1])), 0.0);
    }

    #[test]
    fn splitting_on_an_absent_node_keeps_entropy() {
        let a = uapdg_with_presence(3, &[&[], &[0], &[1, 2]]);
        let all = BTreeSet::from([0, 1, 2]);
        assert!((compute_entropy(&all, &a, 0) - group_entropy(&a, &all)).abs() < 1e-12);
    }

    #[test]
    fn single_example_keeps_whole_graph() {
        let g = pdg("Cursor c = db.query(); c.moveToFirst();");
        let sub = get_conjunctive_subrule(&[Vpdg::unvaluated(g.clone())], &SynthConfig::default(), &mut SynthReport::default()).unwrap();
        assert_eq!(sub.formula.node_atoms.len(), g.nodes.len());
        assert_eq!(sub.formula.edge_atoms.len(), g.edges.len());
    }

    #[test]
    fn single_frozen_example_keeps_the_neighborhood() {
        let g = pdg("Cursor c = db.query(); c.moveToFirst(); String s = c.getString(0); s.trim();");
        let c = g.nodes.iter().find(|n| n.data_type.as_deref() == Some("Cursor")).unwrap().id.clone();
        let v = Vpdg::new(g.clone(), BTreeMap::from([(c.clone(), "x0".to_string())])).unwrap();
        let sub = get_conjunctive_subrule(&[v], &SynthConfig::default(), &mut SynthReport::default()).unwrap();
        let neighbors = g.neighbors(&c).unwrap();
        assert_eq!(sub.formula.node_atoms.len(), neighbors.len() + 1);
        let labels: BTreeSet<&str> = sub
            .formula
            .node_atoms
            .values()
            .filter_map(|p| p.exact_label())
            .collect();
        assert!(labels.contains("getString") && !labels.contains("trim"));
    }

    #[test]
    fn identical_examples_offer_no_split() {
        let g = pdg("Cursor c = db.query(); c.moveToFirst();");
        let vs = vec![Vpdg::unvaluated(g.clone()), Vpdg::unvaluated(g)];
        let parts = generate_candidate_partitions(&vs, &SynthConfig::default(), &mut SynthReport::default()).unwrap();
        assert!(parts.is_empty());
    }

    #[test]
    fn no_conforming_means_false_post() {
        let r = synthesize_pc(&[], &[], &[], &SynthConfig::default(), &mut SynthReport::default()).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn inseparable_input_fails() {
        let g = pdg("Cursor c = db.query(); c.moveToFirst();");
        let input = SynthesisInput {
            name: "r".into(),
            violating: vec![g.clone()],
            conforming: vec![g],
            config: SynthConfig::default(),
        };
        assert!(matches!(synthesize_rule(&input), Err(SynthError::Fail { .. })));
    }

    #[test]
    fn violating_only_gives_precondition_rule() {
        let input = SynthesisInput {
            name: "r".into(),
            violating: vec![pdg("Cursor c = db.query(); c.moveToFirst();")],
            conforming: vec![pdg("int n = list.size();")],
            config: SynthConfig::default(),
        };
        let (r, _) = synthesize_rule(&input).unwrap();
        assert!(r.post.is_empty());
        assert!(!r.pre.node_atoms.is_empty());
    }

    #[test]
    fn negative_delta_is_rejected() {
        let input = SynthesisInput {
            name: "r".into(),
            violating: vec![pdg("a.b();")],
            conforming: vec![],
            config: SynthConfig {
                delta: -1.0,
                ..SynthConfig::default()
            },
        };
        assert!(matches!(synthesize_rule(&input), Err(SynthError::Config(_))));
    }
}
