//! Source frontend for `.mj` files: one Java-like method per file, lowered to a
//! normalized dependence graph.
//!
//! Grammar (informal):
//!
//! ```text
//! file     := method | stmt*
//! method   := modifier* type IDENT '(' (type IDENT (',' type IDENT)*)? ')' ('throws' type,+)? block
//! stmt     := type IDENT ('=' expr)? ';' | IDENT ('=' | '+=' | '-=' | '*=' | '/=') expr ';'
//!           | IDENT ('++' | '--') ';' | expr ';' | block | ';'
//!           | 'if' '(' expr ')' stmt ('else' stmt)?
//!           | 'while' '(' expr ')' stmt | 'do' stmt 'while' '(' expr ')' ';'
//!           | 'for' '(' simple,* ';' expr? ';' simple,* ')' stmt
//!           | 'return' expr? ';' | 'throw' expr ';' | 'break' ';' | 'continue' ';'
//!           | 'try' block ('catch' '(' type IDENT ')' block)* ('finally' block)?
//! expr     := binary operators || && | ^ & == != < <= > >= + - * / %, unary ! -,
//!             literals, names, `this`, `new T(args)`, calls `f(args)` / `e.f(args)`,
//!             field reads `e.f`
//! type     := IDENT ('.' IDENT)* ('[' ']')*
//! ```
//!
//! Generic type arguments, lambdas, method references, casts, array access,
//! conditional expressions, switch, field writes and anonymous classes are
//! rejected as unsupported.

mod build;
pub mod parse;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use thiserror::Error;

use crate::lattice::NodeFacts;
use crate::pdg::{ChangeTag, Edge, EdgeLabel, GraphIndex, NodeKind, Origin, Pdg, PdgError};

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("line {line}: {message}")]
    Parse { line: u32, message: String },
    #[error("line {line}: unsupported construct: {construct}")]
    Unsupported { line: u32, construct: String },
    #[error(transparent)]
    Graph(#[from] PdgError),
    #[error("node `{0}` is not an action node")]
    NotAction(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// One method in the mini-language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodSource {
    pub name: String,
    pub body: String,
}

impl MethodSource {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        MethodSource {
            name: name.into(),
            body: body.into(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, FrontendError> {
        let body = std::fs::read_to_string(path).map_err(|source| FrontendError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(MethodSource {
            name: path.display().to_string(),
            body,
        })
    }
}

/// A before/after pair of the same method.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeChange {
    pub before: MethodSource,
    pub after: MethodSource,
}

/// Parses, lowers and normalizes one method.
pub fn build_pdg(m: &MethodSource) -> Result<Pdg, FrontendError> {
    let method = parse::parse_method(&m.body)?;
    let mut g = build::Builder::new().build(&method)?;
    g = normalize_relops(&g);
    g = dedup_getters(&g);
    g.origin = Some(Origin {
        file: Some(m.name.clone()),
        method: method.name.clone(),
        line: Some(method.line),
    });
    debug_assert!(g.validate().is_empty(), "{:?}", g.validate());
    Ok(g)
}

pub const REL_OP: &str = "<rel_op>";

/// Relabels every relational operator node as `<rel_op>`.
pub fn normalize_relops(g: &Pdg) -> Pdg {
    let mut out = g.clone();
    for n in out.nodes.iter_mut().filter(|n| n.is_action()) {
        if matches!(n.label.as_deref(), Some("<" | "<=" | ">" | ">=" | "==" | "!=")) {
            n.label = Some(REL_OP.to_string());
        }
    }
    out
}

/// `get`/`is`/`has` followed by an upper-case letter (or nothing else).
pub fn is_getter_name(label: &str) -> bool {
    ["get", "is", "has"].iter().any(|p| {
        label
            .strip_prefix(p)
            .is_some_and(|rest| rest.is_empty() || rest.starts_with(|c: char| c.is_uppercase()))
    })
}

/// Collapses repeated zero-argument getter calls on the same receiver into the
/// first one, redirecting uses of the dropped results to the survivor's result.
pub fn dedup_getters(g: &Pdg) -> Pdg {
    let idx = g.index();
    let mut groups: BTreeMap<(String, usize), Vec<usize>> = BTreeMap::new();
    for (i, n) in g.nodes.iter().enumerate() {
        if !n.is_action() || !is_getter_name(n.label_str()) || n.declaring_type.is_some() {
            continue;
        }
        let has_params = idx.inc[i]
            .iter()
            .any(|&(e, _)| matches!(g.edges[e].label, EdgeLabel::Para(_)));
        if has_params || n.num_para.unwrap_or(0) != 0 {
            continue;
        }
        let recvs: Vec<usize> = idx.inc[i]
            .iter()
            .filter(|&&(e, _)| g.edges[e].label == EdgeLabel::Recv)
            .map(|&(_, s)| s)
            .collect();
        if let [r] = recvs[..] {
            groups.entry((n.label_str().to_string(), r)).or_default().push(i);
        }
    }

    let def_target = |i: usize| {
        idx.out[i]
            .iter()
            .find(|&&(e, _)| g.edges[e].label == EdgeLabel::Def)
            .map(|&(_, t)| t)
    };

    let mut removed: HashSet<usize> = HashSet::new();
    // Rewrites an endpoint of a surviving edge: dropped result -> survivor's result.
    let mut redirect: BTreeMap<usize, usize> = BTreeMap::new();
    let mut extra_edges: Vec<(usize, usize, EdgeLabel)> = Vec::new();
    for members in groups.values().filter(|m| m.len() > 1) {
        let keep = members[0];
        let mut keep_result = def_target(keep);
        for &dup in &members[1..] {
            removed.insert(dup);
            if let Some(t) = def_target(dup) {
                match keep_result {
                    Some(k) => {
                        removed.insert(t);
                        redirect.insert(t, k);
                    }
                    None => {
                        extra_edges.push((keep, t, EdgeLabel::Def));
                        keep_result = Some(t);
                    }
                }
            }
        }
    }
    if removed.is_empty() {
        return g.clone();
    }

    let mut out = Pdg {
        nodes: g
            .nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| !removed.contains(i))
            .map(|(_, n)| n.clone())
            .collect(),
        edges: Vec::new(),
        origin: g.origin.clone(),
    };
    let mut seen = HashSet::new();
    let mut push = |s: usize, d: usize, label: EdgeLabel, edges: &mut Vec<Edge>| {
        if seen.insert((s, d, label)) {
            edges.push(Edge::new(g.nodes[s].id.clone(), g.nodes[d].id.clone(), label));
        }
    };
    for (k, e) in g.edges.iter().enumerate() {
        let (s, d) = idx.ends[k];
        let s2 = redirect.get(&s).copied().unwrap_or(s);
        let d2 = redirect.get(&d).copied().unwrap_or(d);
        if removed.contains(&s2) || removed.contains(&d2) {
            continue;
        }
        push(s2, d2, e.label, &mut out.edges);
    }
    for (s, d, label) in extra_edges {
        push(s, d, label, &mut out.edges);
    }
    out
}

fn action_index(g: &Pdg, idx: &GraphIndex, id: &str) -> Result<usize, FrontendError> {
    let i = idx
        .index_of(id)
        .ok_or_else(|| PdgError::UnknownNode(id.to_string()))?;
    if g.nodes[i].kind != NodeKind::Action {
        return Err(FrontendError::NotAction(id.to_string()));
    }
    Ok(i)
}

fn output_ignored_at(g: &Pdg, idx: &GraphIndex, i: usize) -> bool {
    idx.out[i]
        .iter()
        .filter(|&&(e, _)| g.edges[e].label == EdgeLabel::Def)
        .all(|&(_, t)| idx.out[t].is_empty())
}

/// True when the call's result is never produced or never used.
pub fn compute_output_ignored(g: &Pdg, id: &str) -> Result<bool, FrontendError> {
    let idx = g.index();
    let i = action_index(g, &idx, id)?;
    Ok(output_ignored_at(g, &idx, i))
}

fn control_labels_at(g: &Pdg, idx: &GraphIndex, i: usize) -> BTreeSet<String> {
    let mut seen = vec![false; g.nodes.len()];
    let mut stack = vec![i];
    let mut labels = BTreeSet::new();
    while let Some(n) = stack.pop() {
        for &(e, src) in &idx.inc[n] {
            if g.edges[e].label != EdgeLabel::Dep || seen[src] {
                continue;
            }
            seen[src] = true;
            if g.nodes[src].is_action() {
                labels.insert(g.nodes[src].label_str().to_string());
            }
            stack.push(src);
        }
    }
    labels
}

/// Labels of every action node that reaches `id` through Dep edges.
pub fn compute_trans_control_dep(g: &Pdg, id: &str) -> Result<BTreeSet<String>, FrontendError> {
    let idx = g.index();
    let i = idx
        .index_of(id)
        .ok_or_else(|| PdgError::UnknownNode(id.to_string()))?;
    Ok(control_labels_at(g, &idx, i))
}

/// Derived attributes for every node, in node order.
pub fn node_facts(g: &Pdg) -> Vec<NodeFacts> {
    let idx = g.index();
    (0..g.nodes.len())
        .map(|i| NodeFacts {
            output_ignored: g.nodes[i]
                .is_action()
                .then(|| output_ignored_at(g, &idx, i)),
            trans_control_dep: control_labels_at(g, &idx, i),
        })
        .collect()
}

/// True when every node carries a change tag.
pub fn is_change_tagged(g: &Pdg) -> bool {
    !g.nodes.is_empty() && g.nodes.iter().all(|n| n.change_tag != ChangeTag::None)
}
