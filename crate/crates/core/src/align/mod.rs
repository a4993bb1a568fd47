//! Maximal pairwise alignment of two graphs, solved as a 0-1 program.
//!
//! A node pair may align when both nodes have the same kind, action nodes carry
//! the same label, and (when change tags are respected) action nodes carry the
//! same tag. Edges align when their labels match and both endpoint pairs are
//! aligned. A data-node pair needs at least one aligned incident edge pair unless
//! it is pinned. The objective counts aligned nodes plus aligned edges.

pub mod ilp;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use thiserror::Error;

pub use ilp::{BranchAndBound, IlpInstance, IlpSolver, Sense, Solution, SolveError};

use crate::pdg::{ChangeTag, EdgeLabel, GraphIndex, NodeKind, Pdg};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewNode {
    pub kind: NodeKind,
    /// Exact action label, if known.
    pub label: Option<String>,
    pub tag: ChangeTag,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewEdge {
    pub src: usize,
    pub dst: usize,
    pub label: EdgeLabel,
}

/// The part of a graph that alignment looks at.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GraphView {
    pub nodes: Vec<ViewNode>,
    pub edges: Vec<ViewEdge>,
}

impl From<&Pdg> for GraphView {
    fn from(g: &Pdg) -> Self {
        let idx = GraphIndex::new(g);
        GraphView {
            nodes: g
                .nodes
                .iter()
                .map(|n| ViewNode {
                    kind: n.kind,
                    label: n.label.clone(),
                    tag: n.change_tag,
                })
                .collect(),
            edges: g
                .edges
                .iter()
                .zip(&idx.ends)
                .filter(|(_, &(s, _))| s != usize::MAX)
                .map(|(e, &(src, dst))| ViewEdge {
                    src,
                    dst,
                    label: e.label,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Action nodes only align with action nodes carrying the same change tag.
    Precondition,
    /// Change tags are ignored.
    Postcondition,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentProblem {
    pub g1: GraphView,
    pub g2: GraphView,
    pub mode: Mode,
    /// Node pairs (index in g1, index in g2) that must align.
    pub pins: Vec<(usize, usize)>,
}

impl AlignmentProblem {
    pub fn new(g1: GraphView, g2: GraphView, mode: Mode) -> Self {
        AlignmentProblem {
            g1,
            g2,
            mode,
            pins: Vec::new(),
        }
    }

    pub fn with_pins(mut self, pins: Vec<(usize, usize)>) -> Self {
        self.pins = pins;
        self
    }

    pub fn validate(&self) -> Result<(), AlignError> {
        let mut left = BTreeSet::new();
        let mut right = BTreeSet::new();
        for &(a, b) in &self.pins {
            if a >= self.g1.nodes.len() || b >= self.g2.nodes.len() {
                return Err(AlignError::BadPin(a, b, "node index out of range"));
            }
            if !left.insert(a) || !right.insert(b) {
                return Err(AlignError::BadPin(a, b, "node pinned twice"));
            }
        }
        Ok(())
    }

    fn compatible(&self, i: usize, j: usize) -> bool {
        let (a, b) = (&self.g1.nodes[i], &self.g2.nodes[j]);
        if a.kind != b.kind {
            return false;
        }
        if a.kind == NodeKind::Action {
            if a.label.is_none() || a.label != b.label {
                return false;
            }
            if self.mode == Mode::Precondition && a.tag != b.tag {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub node_map: BTreeMap<usize, usize>,
    pub edge_map: BTreeMap<usize, usize>,
    pub objective: i64,
}

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("invalid pin ({0}, {1}): {2}")]
    BadPin(usize, usize, &'static str),
    #[error("pinned nodes {0} and {1} cannot align")]
    IncompatiblePin(usize, usize),
    #[error("{pairs} candidate node pairs exceed the cap of {cap}")]
    TooLarge { pairs: usize, cap: usize },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("solver returned an inconsistent alignment: {0}")]
    Inconsistent(String),
    #[error("cannot write ILP dump: {0}")]
    Dump(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct AlignConfig {
    pub max_pairs: usize,
    pub max_search_nodes: u64,
    /// When set, every instance is written here as `ilp-NNNNN.lp`.
    pub dump_dir: Option<PathBuf>,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            max_pairs: 20_000,
            max_search_nodes: 20_000_000,
            dump_dir: None,
        }
    }
}

static DUMP_COUNTER: AtomicUsize = AtomicUsize::new(0);

/// An instance together with the meaning of its pair variables.
#[derive(Debug, Clone)]
pub struct AlignmentIlp {
    pub instance: IlpInstance,
    pub node_pairs: Vec<(usize, usize)>,
    pub edge_pairs: Vec<(usize, usize)>,
}

fn candidate_pairs(p: &AlignmentProblem) -> Result<(Vec<(usize, usize)>, Vec<(usize, usize)>), AlignError> {
    let pin_of_1: HashMap<usize, usize> = p.pins.iter().copied().collect();
    let pin_of_2: HashMap<usize, usize> = p.pins.iter().map(|&(a, b)| (b, a)).collect();
    for &(a, b) in &p.pins {
        if !p.compatible(a, b) {
            return Err(AlignError::IncompatiblePin(a, b));
        }
    }
    let mut nodes: BTreeSet<(usize, usize)> = BTreeSet::new();
    for i in 0..p.g1.nodes.len() {
        for j in 0..p.g2.nodes.len() {
            // A pinned node can only sit in its own pin.
            let pinned_elsewhere = pin_of_1.get(&i).is_some_and(|&b| b != j) || pin_of_2.get(&j).is_some_and(|&a| a != i);
            if !pinned_elsewhere && p.compatible(i, j) {
                nodes.insert((i, j));
            }
        }
    }
    // Dropping an unsupported data pair can strand edge pairs and vice versa.
    loop {
        let edges: Vec<(usize, usize)> = edge_candidates(p, &nodes);
        let mut supported: BTreeSet<(usize, usize)> = BTreeSet::new();
        for &(k, l) in &edges {
            let (a, b) = (&p.g1.edges[k], &p.g2.edges[l]);
            supported.insert((a.src, b.src));
            supported.insert((a.dst, b.dst));
        }
        let before = nodes.len();
        nodes.retain(|&(i, j)| {
            p.g1.nodes[i].kind == NodeKind::Action || pin_of_1.get(&i) == Some(&j) || supported.contains(&(i, j))
        });
        if nodes.len() == before {
            return Ok((nodes.into_iter().collect(), edges));
        }
    }
}

fn edge_candidates(p: &AlignmentProblem, nodes: &BTreeSet<(usize, usize)>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (k, a) in p.g1.edges.iter().enumerate() {
        for (l, b) in p.g2.edges.iter().enumerate() {
            if a.label == b.label && nodes.contains(&(a.src, b.src)) && nodes.contains(&(a.dst, b.dst)) {
                out.push((k, l));
            }
        }
    }
    out
}

/// Encodes the alignment problem. Pairs that the compatibility rules force to
/// zero get no variable at all.
pub fn build_alignment_ilp(p: &AlignmentProblem) -> Result<AlignmentIlp, AlignError> {
    p.validate()?;
    let (node_pairs, edge_pairs) = candidate_pairs(p)?;
    let mut inst = IlpInstance::default();
    let zn: Vec<usize> = node_pairs.iter().map(|(i, j)| inst.add_var(format!("zn_{i}_{j}"))).collect();
    let ze: Vec<usize> = edge_pairs.iter().map(|(k, l)| inst.add_var(format!("ze_{k}_{l}"))).collect();
    inst.objective = zn.iter().chain(&ze).map(|&v| (v, 1)).collect();

    let n_index: HashMap<(usize, usize), usize> = node_pairs.iter().copied().zip(zn.iter().copied()).collect();

    // Optional mapping: each element maps to exactly one partner or to its slack.
    let by_side = |count: usize, key: &dyn Fn(usize) -> usize, vars: &[usize], prefix: &str, inst: &mut IlpInstance| {
        let mut groups: Vec<Vec<(usize, i64)>> = vec![Vec::new(); count];
        for (pos, &v) in vars.iter().enumerate() {
            groups[key(pos)].push((v, 1));
        }
        for (x, mut terms) in groups.into_iter().enumerate() {
            let slack = inst.add_var(format!("s{prefix}_{x}"));
            terms.push((slack, 1));
            inst.add_constraint(format!("map_{prefix}_{x}"), terms, Sense::Eq, 1);
        }
    };
    by_side(p.g1.nodes.len(), &|pos| node_pairs[pos].0, &zn, "n1", &mut inst);
    by_side(p.g2.nodes.len(), &|pos| node_pairs[pos].1, &zn, "n2", &mut inst);
    by_side(p.g1.edges.len(), &|pos| edge_pairs[pos].0, &ze, "e1", &mut inst);
    by_side(p.g2.edges.len(), &|pos| edge_pairs[pos].1, &ze, "e2", &mut inst);

    for &(a, b) in &p.pins {
        inst.add_constraint(format!("pin_{a}_{b}"), vec![(n_index[&(a, b)], 1)], Sense::Eq, 1);
    }

    let mut incident: BTreeMap<usize, Vec<(usize, i64)>> = BTreeMap::new();
    for (&(k, l), &v) in edge_pairs.iter().zip(&ze) {
        let (a, b) = (&p.g1.edges[k], &p.g2.edges[l]);
        let src = n_index[&(a.src, b.src)];
        let dst = n_index[&(a.dst, b.dst)];
        inst.add_constraint(format!("src_{k}_{l}"), vec![(v, 1), (src, -1)], Sense::Le, 0);
        inst.add_constraint(format!("dst_{k}_{l}"), vec![(v, 1), (dst, -1)], Sense::Le, 0);
        incident.entry(src).or_default().push((v, -1));
        if dst != src {
            incident.entry(dst).or_default().push((v, -1));
        }
    }
    let pinned: BTreeSet<(usize, usize)> = p.pins.iter().copied().collect();
    for (&(i, j), &v) in node_pairs.iter().zip(&zn) {
        if p.g1.nodes[i].kind == NodeKind::Data && !pinned.contains(&(i, j)) {
            let mut terms = vec![(v, 1)];
            terms.extend(incident.get(&v).cloned().unwrap_or_default());
            inst.add_constraint(format!("data_{i}_{j}"), terms, Sense::Le, 0);
        }
    }
    Ok(AlignmentIlp {
        instance: inst,
        node_pairs,
        edge_pairs,
    })
}

pub fn align(p: &AlignmentProblem, cfg: &AlignConfig) -> Result<Alignment, AlignError> {
    let solver = BranchAndBound {
        max_search_nodes: cfg.max_search_nodes,
        ..BranchAndBound::default()
    };
    align_with(p, cfg, &solver)
}

pub fn align_with(p: &AlignmentProblem, cfg: &AlignConfig, solver: &dyn IlpSolver) -> Result<Alignment, AlignError> {
    let enc = build_alignment_ilp(p)?;
    if enc.node_pairs.len() > cfg.max_pairs {
        return Err(AlignError::TooLarge {
            pairs: enc.node_pairs.len(),
            cap: cfg.max_pairs,
        });
    }
    if let Some(dir) = &cfg.dump_dir {
        std::fs::create_dir_all(dir)?;
        let n = DUMP_COUNTER.fetch_add(1, Ordering::Relaxed);
        std::fs::write(dir.join(format!("ilp-{n:05}.lp")), enc.instance.to_lp())?;
    }
    let sol = solver.solve(&enc.instance)?;
    let node_map: BTreeMap<usize, usize> = enc
        .node_pairs
        .iter()
        .enumerate()
        .filter(|(v, _)| sol.values[*v])
        .map(|(_, &pair)| pair)
        .collect();
    let offset = enc.node_pairs.len();
    let edge_map: BTreeMap<usize, usize> = enc
        .edge_pairs
        .iter()
        .enumerate()
        .filter(|(v, _)| sol.values[offset + v])
        .map(|(_, &pair)| pair)
        .collect();
    let a = Alignment {
        objective: (node_map.len() + edge_map.len()) as i64,
        node_map,
        edge_map,
    };
    if a.objective != sol.objective {
        return Err(AlignError::Inconsistent(format!(
            "solver objective {} but decoded {}",
            sol.objective, a.objective
        )));
    }
    check_alignment(p, &a).map_err(AlignError::Inconsistent)?;
    log::debug!(
        "aligned {}x{} nodes: {} node pairs, {} edge pairs",
        p.g1.nodes.len(),
        p.g2.nodes.len(),
        a.node_map.len(),
        a.edge_map.len()
    );
    Ok(a)
}

/// Independent check of every alignment rule on a decoded result.
pub fn check_alignment(p: &AlignmentProblem, a: &Alignment) -> Result<(), String> {
    let image: BTreeSet<usize> = a.node_map.values().copied().collect();
    if image.len() != a.node_map.len() {
        return Err("node map is not injective".into());
    }
    let eimage: BTreeSet<usize> = a.edge_map.values().copied().collect();
    if eimage.len() != a.edge_map.len() {
        return Err("edge map is not injective".into());
    }
    for (&i, &j) in &a.node_map {
        if !p.compatible(i, j) {
            return Err(format!("nodes {i} and {j} are not compatible"));
        }
    }
    for &(i, j) in &p.pins {
        if a.node_map.get(&i) != Some(&j) {
            return Err(format!("pin ({i}, {j}) not honored"));
        }
    }
    let mut supported = BTreeSet::new();
    for (&k, &l) in &a.edge_map {
        let (e1, e2) = (&p.g1.edges[k], &p.g2.edges[l]);
        if e1.label != e2.label {
            return Err(format!("edges {k} and {l} have different labels"));
        }
        if a.node_map.get(&e1.src) != Some(&e2.src) || a.node_map.get(&e1.dst) != Some(&e2.dst) {
            return Err(format!("edge pair ({k}, {l}) has unaligned endpoints"));
        }
        supported.insert(e1.src);
        supported.insert(e1.dst);
    }
    for (&i, &j) in &a.node_map {
        if p.g1.nodes[i].kind == NodeKind::Data && !supported.contains(&i) && !p.pins.contains(&(i, j)) {
            return Err(format!("data node {i} aligned without an aligned edge"));
        }
    }
    Ok(())
}

/// Tags both sides of a change: aligned nodes are unchanged, the rest of the
/// old graph is deleted and the rest of the new graph is added.
pub fn diff_pdgs(before: &Pdg, after: &Pdg, cfg: &AlignConfig) -> Result<(Pdg, Pdg), AlignError> {
    let p = AlignmentProblem::new(GraphView::from(before), GraphView::from(after), Mode::Postcondition);
    let a = align(&p, cfg)?;
    let mut b = before.clone();
    let mut f = after.clone();
    let mapped_after: BTreeSet<usize> = a.node_map.values().copied().collect();
    for (i, n) in b.nodes.iter_mut().enumerate() {
        n.change_tag = if a.node_map.contains_key(&i) {
            ChangeTag::Unchanged
        } else {
            ChangeTag::Deleted
        };
    }
    for (j, n) in f.nodes.iter_mut().enumerate() {
        n.change_tag = if mapped_after.contains(&j) {
            ChangeTag::Unchanged
        } else {
            ChangeTag::Added
        };
    }
    Ok((b, f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdg::{Edge, Node};

    fn call(recv_ty: &str, name: &str) -> Pdg {
        Pdg {
            nodes: vec![Node::data("n0").with_type(recv_ty), Node::action("n1", name)],
            edges: vec![Edge::new("n0", "n1", EdgeLabel::Recv)],
            origin: None,
        }
    }

    fn problem(a: &Pdg, b: &Pdg, mode: Mode) -> AlignmentProblem {
        AlignmentProblem::new(a.into(), b.into(), mode)
    }

    #[test]
    fn single_actions_with_equal_labels_align() {
        let a = Pdg {
            nodes: vec![Node::action("n0", "foo")],
            ..Pdg::default()
        };
        let enc = build_alignment_ilp(&problem(&a, &a, Mode::Postcondition)).unwrap();
        assert_eq!(enc.node_pairs, vec![(0, 0)]);
        let r = align(&problem(&a, &a, Mode::Postcondition), &AlignConfig::default()).unwrap();
        assert_eq!(r.objective, 1);
    }

    #[test]
    fn different_labels_do_not_align() {
        let a = Pdg {
            nodes: vec![Node::action("n0", "foo")],
            ..Pdg::default()
        };
        let b = Pdg {
            nodes: vec![Node::action("n0", "bar")],
            ..Pdg::default()
        };
        let r = align(&problem(&a, &b, Mode::Postcondition), &AlignConfig::default()).unwrap();
        assert_eq!(r.objective, 0);
        assert!(r.node_map.is_empty());
    }

    #[test]
    fn isolated_data_nodes_stay_unaligned() {
        let a = Pdg {
            nodes: vec![Node::data("n0").with_type("int")],
            ..Pdg::default()
        };
        let r = align(&problem(&a, &a, Mode::Postcondition), &AlignConfig::default()).unwrap();
        assert_eq!(r.objective, 0);
    }

    #[test]
    fn pinned_isolated_data_nodes_align() {
        let a = Pdg {
            nodes: vec![Node::data("n0")],
            ..Pdg::default()
        };
        let p = problem(&a, &a, Mode::Postcondition).with_pins(vec![(0, 0)]);
        let r = align(&p, &AlignConfig::default()).unwrap();
        assert_eq!(r.node_map.get(&0), Some(&0));
    }

    #[test]
    fn change_tags_matter_only_for_preconditions() {
        let mut a = call("Cursor", "close");
        let mut b = a.clone();
        a.nodes[1].change_tag = ChangeTag::Added;
        b.nodes[1].change_tag = ChangeTag::Unchanged;
        let pre = align(&problem(&a, &b, Mode::Precondition), &AlignConfig::default()).unwrap();
        assert_eq!(pre.objective, 0);
        let post = align(&problem(&a, &b, Mode::Postcondition), &AlignConfig::default()).unwrap();
        assert_eq!(post.objective, 3);
    }

    #[test]
    fn para_indices_must_match() {
        let mk = |i| Pdg {
            nodes: vec![Node::data("n0"), Node::action("n1", "f")],
            edges: vec![Edge::new("n0", "n1", EdgeLabel::Para(i))],
            origin: None,
        };
        let r = align(&problem(&mk(0), &mk(1), Mode::Postcondition), &AlignConfig::default()).unwrap();
        assert_eq!(r.objective, 1);
    }

    #[test]
    fn incompatible_pin_is_rejected() {
        let a = call("Cursor", "close");
        let p = problem(&a, &a, Mode::Postcondition).with_pins(vec![(0, 1)]);
        assert!(matches!(align(&p, &AlignConfig::default()), Err(AlignError::IncompatiblePin(0, 1))));
        let p = problem(&a, &a, Mode::Postcondition).with_pins(vec![(0, 0), (1, 0)]);
        assert!(matches!(p.validate(), Err(AlignError::BadPin(..))));
    }

    #[test]
    fn pair_cap_is_an_error() {
        let a = call("Cursor", "close");
        let cfg = AlignConfig {
            max_pairs: 1,
            ..AlignConfig::default()
        };
        assert!(matches!(
            align(&problem(&a, &a, Mode::Postcondition), &cfg),
            Err(AlignError::TooLarge { .. })
        ));
    }

    #[test]
    fn diff_tags_a_single_added_call() {
        let before = call("Cursor", "moveToFirst");
        let mut after = before.clone();
        after.nodes.push(Node::action("n2", "close"));
        after.edges.push(Edge::new("n0", "n2", EdgeLabel::Recv));
        let (b, f) = diff_pdgs(&before, &after, &AlignConfig::default()).unwrap();
        assert!(b.nodes.iter().all(|n| n.change_tag == ChangeTag::Unchanged));
        let added: Vec<&str> = f
            .nodes
            .iter()
            .filter(|n| n.change_tag == ChangeTag::Added)
            .map(|n| n.label_str())
            .collect();
        assert_eq!(added, vec!["close"]);
    }

    #[test]
    fn ilp_dump_is_written() {
        let dir = std::env::temp_dir().join(format!("align-dump-{}", std::process::id()));
        let cfg = AlignConfig {
            dump_dir: Some(dir.clone()),
            ..AlignConfig::default()
        };
        let a = call("Cursor", "close");
        align(&problem(&a, &a, Mode::Postcondition), &cfg).unwrap();
        let files: Vec<_> = std::fs::read_dir(&dir).unwrap().collect();
        assert!(!files.is_empty());
        let text = std::fs::read_to_string(files[0].as_ref().unwrap().path()).unwrap();
        assert!(text.starts_with("Maximize"));
        std::fs::remove_dir_all(dir).unwrap();
    }
}
