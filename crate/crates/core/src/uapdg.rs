//! Valuated graphs, unified annotated graphs (one graph summarizing several
//! examples), the merge and project operators, and their reading as an
//! existentially quantified conjunction of node and edge predicates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::align::{self, AlignConfig, AlignError, Alignment, AlignmentProblem, GraphView, Mode, ViewEdge, ViewNode};
use crate::frontend::node_facts;
use crate::lattice::{ConstLattice, NodePredicates};
use crate::pdg::{ChangeTag, EdgeLabel, NodeKind, Pdg};

#[derive(Debug, Error)]
pub enum UapdgError {
    #[error("valuation names unknown node `{0}`")]
    UnknownNode(String),
    #[error("variable `{0}` is assigned to more than one node")]
    NotInjective(String),
    #[error("free variables differ: {0:?} vs {1:?}")]
    FreeVarMismatch(BTreeSet<String>, BTreeSet<String>),
    #[error("alignment does not pair the nodes frozen to `{0}`")]
    PinViolated(String),
    #[error("projection would drop the node frozen to `{0}`")]
    FrozenDropped(String),
    #[error(transparent)]
    Align(#[from] AlignError),
}

/// A graph plus an assignment of some of its nodes to free variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vpdg {
    pub graph: Pdg,
    /// Node id to variable name.
    pub valuation: BTreeMap<String, String>,
}

impl Vpdg {
    pub fn new(graph: Pdg, valuation: BTreeMap<String, String>) -> Result<Self, UapdgError> {
        let mut seen = BTreeSet::new();
        for (id, var) in &valuation {
            if graph.node(id).is_none() {
                return Err(UapdgError::UnknownNode(id.clone()));
            }
            if !seen.insert(var) {
                return Err(UapdgError::NotInjective(var.clone()));
            }
        }
        Ok(Vpdg { graph, valuation })
    }

    pub fn unvaluated(graph: Pdg) -> Self {
        Vpdg {
            graph,
            valuation: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UNode {
    pub preds: NodePredicates,
    /// Shared change tag of the members, `None` when they disagree.
    pub tag: ChangeTag,
    /// Source example to the id of the node it contributed.
    pub members: BTreeMap<usize, String>,
}

impl UNode {
    pub fn presence(&self) -> BTreeSet<usize> {
        self.members.keys().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UEdge {
    pub src: usize,
    pub dst: usize,
    pub label: EdgeLabel,
    pub presence: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Uapdg {
    pub nodes: Vec<UNode>,
    pub edges: Vec<UEdge>,
    /// Frozen nodes: node index to free variable.
    pub free: BTreeMap<usize, String>,
    /// Every other node: node index to bound variable.
    pub bound: BTreeMap<usize, String>,
}

fn combine_tags(a: ChangeTag, b: ChangeTag) -> ChangeTag {
    if a == b {
        a
    } else {
        ChangeTag::None
    }
}

impl Uapdg {
    /// Lifts one example, identified as `source`, into a single-source graph.
    pub fn from_vpdg(v: &Vpdg, source: usize) -> Uapdg {
        let facts = node_facts(&v.graph);
        let idx = v.graph.index();
        let nodes = v
            .graph
            .nodes
            .iter()
            .zip(&facts)
            .map(|(n, f)| UNode {
                preds: NodePredicates::from_node(n, f),
                tag: n.change_tag,
                members: BTreeMap::from([(source, n.id.clone())]),
            })
            .collect();
        let edges = v
            .graph
            .edges
            .iter()
            .zip(&idx.ends)
            .filter(|(_, &(s, _))| s != usize::MAX)
            .map(|(e, &(src, dst))| UEdge {
                src,
                dst,
                label: e.label,
                presence: BTreeSet::from([source]),
            })
            .collect();
        let free = v
            .valuation
            .iter()
            .filter_map(|(id, var)| idx.index_of(id).map(|i| (i, var.clone())))
            .collect();
        let mut a = Uapdg {
            nodes,
            edges,
            free,
            bound: BTreeMap::new(),
        };
        a.refresh_bound();
        a
    }

    fn refresh_bound(&mut self) {
        self.bound = (0..self.nodes.len())
            .filter(|i| !self.free.contains_key(i))
            .map(|i| (i, format!("b{i}")))
            .collect();
    }

    pub fn sources(&self) -> BTreeSet<usize> {
        self.nodes.iter().flat_map(|n| n.members.keys().copied()).collect()
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        self.free.values().cloned().collect()
    }

    pub fn var_of(&self, i: usize) -> &str {
        self.free
            .get(&i)
            .or_else(|| self.bound.get(&i))
            .map(String::as_str)
            .expect("every node carries a variable")
    }

    pub fn view(&self) -> GraphView {
        GraphView {
            nodes: self
                .nodes
                .iter()
                .map(|n| ViewNode {
                    kind: match n.preds.kind {
                        ConstLattice::Exactly(NodeKind::Action) => NodeKind::Action,
                        _ => NodeKind::Data,
                    },
                    label: n.preds.exact_label().map(str::to_string),
                    tag: n.tag,
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| ViewEdge {
                    src: e.src,
                    dst: e.dst,
                    label: e.label,
                })
                .collect(),
        }
    }

    /// Node pairs frozen to the same free variable on both sides.
    pub fn pins_with(&self, other: &Uapdg) -> Vec<(usize, usize)> {
        let theirs: BTreeMap<&String, usize> = other.free.iter().map(|(&i, v)| (v, i)).collect();
        self.free
            .iter()
            .filter_map(|(&i, v)| theirs.get(v).map(|&j| (i, j)))
            .collect()
    }

    pub fn alignment_problem(&self, other: &Uapdg, mode: Mode) -> AlignmentProblem {
        AlignmentProblem::new(self.view(), other.view(), mode).with_pins(self.pins_with(other))
    }

    /// For `source`, each member node id mapped to its variable.
    pub fn valuation_for(&self, source: usize) -> BTreeMap<String, String> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.members.get(&source).map(|id| (id.clone(), self.var_of(i).to_string())))
            .collect()
    }

    /// Renames bound variables to `{bound_prefix}{k}` in node order, counting from `start`.
    pub fn rename_bound(&mut self, bound_prefix: &str, start: usize) {
        let mut k = start;
        for name in self.bound.values_mut() {
            *name = format!("{bound_prefix}{k}");
            k += 1;
        }
    }

    /// Debug rendering in Graphviz syntax. One-sided nodes and edges are dashed.
    pub fn to_dot(&self, name: &str) -> String {
        let all = self.sources();
        let mut out = format!("digraph \"{name}\" {{\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let var = self.var_of(i);
            let mut text = vec![var.to_string()];
            text.extend(n.preds.atoms(var));
            let shape = if n.preds.is_action() { "box" } else { "ellipse" };
            let style = if n.presence() == all { "solid" } else { "dashed" };
            let label = text.join("\\n").replace('"', "\\\"");
            writeln!(out, "  n{i} [label=\"{label}\", shape={shape}, style={style}];").unwrap();
        }
        for e in &self.edges {
            let style = if e.presence == all { "solid" } else { "dashed" };
            writeln!(out, "  n{} -> n{} [label=\"{}\", style={style}];", e.src, e.dst, e.label).unwrap();
        }
        out.push_str("}\n");
        out
    }
}

/// Merges two graphs along an alignment between them.
///
/// Aligned pairs become one node whose predicates are the join of both sides;
/// every unaligned node and edge is carried over unchanged.
pub fn merge(a1: &Uapdg, a2: &Uapdg, al: &Alignment) -> Result<Uapdg, UapdgError> {
    let (f1, f2) = (a1.free_vars(), a2.free_vars());
    if f1 != f2 {
        return Err(UapdgError::FreeVarMismatch(f1, f2));
    }
    for (i, j) in a1.pins_with(a2) {
        if al.node_map.get(&i) != Some(&j) {
            return Err(UapdgError::PinViolated(a1.free[&i].clone()));
        }
    }
    let mut nodes = Vec::new();
    let mut free = BTreeMap::new();
    let mut left = vec![0; a1.nodes.len()];
    let mut right = vec![usize::MAX; a2.nodes.len()];
    for (i, n1) in a1.nodes.iter().enumerate() {
        left[i] = nodes.len();
        let mut n = n1.clone();
        if let Some(&j) = al.node_map.get(&i) {
            let n2 = &a2.nodes[j];
            right[j] = nodes.len();
            n.preds = n1.preds.join(&n2.preds);
            n.tag = combine_tags(n1.tag, n2.tag);
            n.members.extend(n2.members.iter().map(|(k, v)| (*k, v.clone())));
            if let (Some(x), Some(y)) = (a1.free.get(&i), a2.free.get(&j)) {
                if x == y {
                    free.insert(nodes.len(), x.clone());
                }
            }
        } else if let Some(x) = a1.free.get(&i) {
            free.insert(nodes.len(), x.clone());
        }
        nodes.push(n);
    }
    for (j, n2) in a2.nodes.iter().enumerate() {
        if right[j] == usize::MAX {
            right[j] = nodes.len();
            if let Some(x) = a2.free.get(&j) {
                free.insert(nodes.len(), x.clone());
            }
            nodes.push(n2.clone());
        }
    }
    let mut edges = Vec::new();
    let mut paired_right = BTreeSet::new();
    for (k, e1) in a1.edges.iter().enumerate() {
        let mut e = UEdge {
            src: left[e1.src],
            dst: left[e1.dst],
            label: e1.label,
            presence: e1.presence.clone(),
        };
        if let Some(&l) = al.edge_map.get(&k) {
            let e2 = &a2.edges[l];
            assert_eq!(e1.label, e2.label, "aligned edges must carry one label");
            e.presence.extend(e2.presence.iter().copied());
            paired_right.insert(l);
        }
        edges.push(e);
    }
    for (l, e2) in a2.edges.iter().enumerate() {
        if !paired_right.contains(&l) {
            edges.push(UEdge {
                src: right[e2.src],
                dst: right[e2.dst],
                label: e2.label,
                presence: e2.presence.clone(),
            });
        }
    }
    let mut out = Uapdg {
        nodes,
        edges,
        free,
        bound: BTreeMap::new(),
    };
    out.refresh_bound();
    Ok(out)
}

/// Aligns and merges in one step, pinning frozen nodes to each other.
pub fn align_and_merge(a1: &Uapdg, a2: &Uapdg, mode: Mode, cfg: &AlignConfig) -> Result<Uapdg, UapdgError> {
    let p = a1.alignment_problem(a2, mode);
    let al = align::align(&p, cfg)?;
    merge(a1, a2, &al)
}

/// Keeps the nodes and edges present in every one of `required`.
pub fn project(a: &Uapdg, required: &BTreeSet<usize>) -> Result<Uapdg, UapdgError> {
    let keep: Vec<bool> = a.nodes.iter().map(|n| required.iter().all(|s| n.members.contains_key(s))).collect();
    if let Some((_, x)) = a.free.iter().find(|(&i, _)| !keep[i]) {
        return Err(UapdgError::FrozenDropped(x.clone()));
    }
    Ok(a.induced(&keep, |e| required.is_subset(&e.presence)))
}

impl Uapdg {
    /// The subgraph on the kept nodes, with the edges among them that pass `edge_ok`.
    /// Variable names carry over.
    pub fn induced(&self, keep: &[bool], edge_ok: impl Fn(&UEdge) -> bool) -> Uapdg {
        let mut new_index = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if keep[i] {
                new_index[i] = nodes.len();
                nodes.push(n.clone());
            }
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| keep[e.src] && keep[e.dst] && edge_ok(e))
            .map(|e| UEdge {
                src: new_index[e.src],
                dst: new_index[e.dst],
                ..e.clone()
            })
            .collect();
        let remap = |m: &BTreeMap<usize, String>| -> BTreeMap<usize, String> {
            m.iter()
                .filter(|(&i, _)| keep[i])
                .map(|(&i, v)| (new_index[i], v.clone()))
                .collect()
        };
        Uapdg {
            nodes,
            edges,
            free: remap(&self.free),
            bound: remap(&self.bound),
        }
    }

    /// Nodes within `radius` undirected steps of a frozen node.
    pub fn near_frozen(&self, radius: usize) -> Vec<bool> {
        let mut dist = vec![usize::MAX; self.nodes.len()];
        for &i in self.free.keys() {
            dist[i] = 0;
        }
        for d in 1..=radius {
            for e in &self.edges {
                for (a, b) in [(e.src, e.dst), (e.dst, e.src)] {
                    if dist[a] == d - 1 && dist[b] == usize::MAX {
                        dist[b] = d;
                    }
                }
            }
        }
        dist.iter().map(|&d| d != usize::MAX).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeAtom {
    pub src: String,
    pub label: EdgeLabel,
    pub dst: String,
}

/// `∃ bound. ⋀ node atoms ∧ ⋀ edge atoms`, with every variable standing for a
/// distinct node.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QuantifiedConjunct {
    pub free_vars: Vec<String>,
    pub bound_vars: Vec<String>,
    pub node_atoms: BTreeMap<String, NodePredicates>,
    pub edge_atoms: BTreeSet<EdgeAtom>,
}

impl QuantifiedConjunct {
    pub fn is_true(&self) -> bool {
        self.node_atoms.is_empty() && self.edge_atoms.is_empty()
    }

    /// Free then bound variables.
    pub fn all_vars(&self) -> impl Iterator<Item = &String> {
        self.free_vars.iter().chain(&self.bound_vars)
    }

    pub fn validate(&self) -> Result<(), String> {
        let vars: BTreeSet<&String> = self.all_vars().collect();
        if vars.len() != self.free_vars.len() + self.bound_vars.len() {
            return Err("a variable is both free and bound or listed twice".into());
        }
        for v in &vars {
            if !self.node_atoms.contains_key(*v) {
                return Err(format!("variable `{v}` has no node atom"));
            }
        }
        if let Some(k) = self.node_atoms.keys().find(|k| !vars.contains(k)) {
            return Err(format!("node atom for undeclared variable `{k}`"));
        }
        for e in &self.edge_atoms {
            for v in [&e.src, &e.dst] {
                if !vars.contains(v) {
                    return Err(format!("edge atom mentions undeclared variable `{v}`"));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for QuantifiedConjunct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_true() {
            return f.write_str("True");
        }
        if !self.bound_vars.is_empty() {
            write!(f, "∃ {}. ", self.bound_vars.join(", "))?;
        }
        let mut atoms: Vec<String> = Vec::new();
        for v in self.all_vars() {
            atoms.extend(self.node_atoms[v].atoms(v));
        }
        atoms.extend(self.edge_atoms.iter().map(|e| format!("{} →{} {}", e.src, e.label, e.dst)));
        if atoms.is_empty() {
            return f.write_str("True");
        }
        f.write_str(&atoms.join(" ∧ "))
    }
}

/// Reads the graph as a formula over its variables, in node order.
pub fn to_formula(a: &Uapdg) -> QuantifiedConjunct {
    let mut q = QuantifiedConjunct::default();
    for (i, n) in a.nodes.iter().enumerate() {
        let var = a.var_of(i).to_string();
        if a.free.contains_key(&i) {
            q.free_vars.push(var.clone());
        } else {
            q.bound_vars.push(var.clone());
        }
        q.node_atoms.insert(var, n.preds.clone());
    }
    q.edge_atoms = a
        .edges
        .iter()
        .map(|e| EdgeAtom {
            src: a.var_of(e.src).to_string(),
            label: e.label,
            dst: a.var_of(e.dst).to_string(),
        })
        .collect();
    q
}
