//! Program dependence graphs: data model, validity checks, JSON interchange
//! and the adjacency queries the rest of the crate builds on.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Data,
    Action,
}

/// Edge relation between two nodes. `Para` carries the 0-based argument position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeLabel {
    Recv,
    Para(u32),
    Def,
    Dep,
    Cond,
    Throw,
}

impl fmt::Display for EdgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeLabel::Recv => f.write_str("recv"),
            EdgeLabel::Para(i) => write!(f, "para{i}"),
            EdgeLabel::Def => f.write_str("def"),
            EdgeLabel::Dep => f.write_str("dep"),
            EdgeLabel::Cond => f.write_str("cond"),
            EdgeLabel::Throw => f.write_str("throw"),
        }
    }
}

impl FromStr for EdgeLabel {
    type Err = String;

    /// Accepts the compact form used in rule files (`para0`, `para1`, ...).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "recv" => Ok(EdgeLabel::Recv),
            "def" => Ok(EdgeLabel::Def),
            "dep" => Ok(EdgeLabel::Dep),
            "cond" => Ok(EdgeLabel::Cond),
            "throw" => Ok(EdgeLabel::Throw),
            _ => s
                .strip_prefix("para")
                .and_then(|rest| rest.parse::<u32>().ok())
                .map(EdgeLabel::Para)
                .ok_or_else(|| format!("unknown edge label `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum ChangeTag {
    Unchanged,
    Deleted,
    Added,
    #[default]
    None,
}

impl ChangeTag {
    fn wire(self) -> Option<&'static str> {
        match self {
            ChangeTag::Unchanged => Some("unchanged"),
            ChangeTag::Deleted => Some("deleted"),
            ChangeTag::Added => Some("added"),
            ChangeTag::None => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub label: Option<String>,
    pub data_type: Option<String>,
    pub data_value: Option<String>,
    pub num_para: Option<u32>,
    pub declaring_type: Option<String>,
    pub change_tag: ChangeTag,
}

impl Node {
    pub fn data(id: impl Into<String>) -> Self {
        Node {
            id: id.into(),
            kind: NodeKind::Data,
            label: None,
            data_type: None,
            data_value: None,
            num_para: None,
            declaring_type: None,
            change_tag: ChangeTag::None,
        }
    }

    pub fn action(id: impl Into<String>, label: impl Into<String>) -> Self {
        Node {
            kind: NodeKind::Action,
            label: Some(label.into()),
            ..Node::data(id)
        }
    }

    pub fn with_type(mut self, ty: impl Into<String>) -> Self {
        self.data_type = Some(ty.into());
        self
    }

    pub fn with_value(mut self, v: impl Into<String>) -> Self {
        self.data_value = Some(v.into());
        self
    }

    pub fn with_num_para(mut self, n: u32) -> Self {
        self.num_para = Some(n);
        self
    }

    pub fn with_declaring_type(mut self, ty: impl Into<String>) -> Self {
        self.declaring_type = Some(ty.into());
        self
    }

    pub fn is_action(&self) -> bool {
        self.kind == NodeKind::Action
    }

    pub fn label_str(&self) -> &str {
        self.label.as_deref().unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub label: EdgeLabel,
}

impl Edge {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, label: EdgeLabel) -> Self {
        Edge {
            src: src.into(),
            dst: dst.into(),
            label,
        }
    }
}

/// Where a graph came from. Every field is optional.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Origin {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<u32>,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let file = self.file.as_deref().unwrap_or("<unknown>");
        f.write_str(file)?;
        if let Some(m) = &self.method {
            write!(f, "#{m}")?;
        }
        if let Some(l) = self.line {
            write!(f, ":{l}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Pdg {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub origin: Option<Origin>,
}

#[derive(Debug, Error)]
pub enum PdgError {
    #[error("unknown node id `{0}`")]
    UnknownNode(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid graph: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// Index-based adjacency over a [`Pdg`], built once and queried many times.
#[derive(Debug, Clone)]
pub struct GraphIndex {
    pub ids: HashMap<String, usize>,
    /// Outgoing `(edge index, target node index)` per node.
    pub out: Vec<Vec<(usize, usize)>>,
    /// Incoming `(edge index, source node index)` per node.
    pub inc: Vec<Vec<(usize, usize)>>,
    /// Edge endpoints as node indices.
    pub ends: Vec<(usize, usize)>,
}

impl GraphIndex {
    pub fn new(g: &Pdg) -> Self {
        let ids: HashMap<String, usize> = g
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect();
        let mut out = vec![Vec::new(); g.nodes.len()];
        let mut inc = vec![Vec::new(); g.nodes.len()];
        let mut ends = Vec::with_capacity(g.edges.len());
        for (k, e) in g.edges.iter().enumerate() {
            let (Some(&s), Some(&d)) = (ids.get(&e.src), ids.get(&e.dst)) else {
                ends.push((usize::MAX, usize::MAX));
                continue;
            };
            out[s].push((k, d));
            inc[d].push((k, s));
            ends.push((s, d));
        }
        GraphIndex { ids, out, inc, ends }
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.get(id).copied()
    }

    pub fn neighbor_indices(&self, i: usize) -> BTreeSet<usize> {
        self.out[i]
            .iter()
            .chain(self.inc[i].iter())
            .map(|&(_, n)| n)
            .filter(|&n| n != i)
            .collect()
    }
}

impl Pdg {
    pub fn new() -> Self {
        Pdg::default()
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn index(&self) -> GraphIndex {
        GraphIndex::new(self)
    }

    pub fn action_labels(&self) -> BTreeSet<&str> {
        self.nodes
            .iter()
            .filter(|n| n.is_action())
            .filter_map(|n| n.label.as_deref())
            .collect()
    }

    /// All nodes adjacent to `id` through an edge in either direction.
    pub fn neighbors(&self, id: &str) -> Result<BTreeSet<String>, PdgError> {
        if self.node(id).is_none() {
            return Err(PdgError::UnknownNode(id.to_string()));
        }
        let mut out = BTreeSet::new();
        for e in &self.edges {
            if e.src == id && e.dst != id {
                out.insert(e.dst.clone());
            }
            if e.dst == id && e.src != id {
                out.insert(e.src.clone());
            }
        }
        Ok(out)
    }

    /// Lists every broken invariant; an empty list means the graph is well formed.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut kinds: HashMap<&str, &Node> = HashMap::new();
        for n in &self.nodes {
            if kinds.insert(n.id.as_str(), n).is_some() {
                problems.push(format!("duplicate node id `{}`", n.id));
            }
            match n.kind {
                NodeKind::Action => {
                    if n.label.as_deref().map_or(true, str::is_empty) {
                        problems.push(format!("action node `{}` has an empty label", n.id));
                    }
                }
                NodeKind::Data => {
                    if n.num_para.is_some() {
                        problems.push(format!("data node `{}` carries numPara", n.id));
                    }
                    if n.declaring_type.is_some() {
                        problems.push(format!("data node `{}` carries declaringType", n.id));
                    }
                }
            }
        }
        let mut seen = HashSet::new();
        for e in &self.edges {
            let name = format!("{} -{}-> {}", e.src, e.label, e.dst);
            let src = kinds.get(e.src.as_str());
            let dst = kinds.get(e.dst.as_str());
            if src.is_none() || dst.is_none() {
                problems.push(format!("dangling edge {name}"));
                continue;
            }
            if !seen.insert((e.src.as_str(), e.dst.as_str(), e.label)) {
                problems.push(format!("duplicate edge {name}"));
            }
            let (src, dst) = (src.unwrap(), dst.unwrap());
            if e.label == EdgeLabel::Def && !src.is_action() {
                problems.push(format!("def edge {name} does not start at an action node"));
            }
            if matches!(e.label, EdgeLabel::Recv | EdgeLabel::Para(_)) && !dst.is_action() {
                problems.push(format!("edge {name} does not end at an action node"));
            }
        }
        problems
    }

    pub fn from_json(text: &str) -> Result<Pdg, PdgError> {
        let wire: WirePdg = serde_json::from_str(text).map_err(|e| PdgError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let g = wire.into_pdg()?;
        let problems = g.validate();
        if problems.is_empty() {
            Ok(g)
        } else {
            Err(PdgError::Invalid(problems))
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&WirePdg::from_pdg(self))
            .expect("graph serialization cannot fail");
        s.push('\n');
        s
    }
}

pub fn read_pdg(bytes: &[u8]) -> Result<Pdg, PdgError> {
    let text = std::str::from_utf8(bytes).map_err(|e| PdgError::Parse {
        line: 0,
        column: e.valid_up_to(),
        message: "input is not UTF-8".into(),
    })?;
    Pdg::from_json(text)
}

pub fn write_pdg(g: &Pdg) -> Vec<u8> {
    g.to_json().into_bytes()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WirePdg {
    nodes: Vec<WireNode>,
    edges: Vec<WireEdge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    origin: Option<Origin>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct WireNode {
    id: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data_value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_para: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    declaring_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    change_tag: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct WireEdge {
    src: String,
    dst: String,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    para_index: Option<u32>,
}

impl WirePdg {
    fn from_pdg(g: &Pdg) -> Self {
        WirePdg {
            nodes: g
                .nodes
                .iter()
                .map(|n| WireNode {
                    id: n.id.clone(),
                    kind: match n.kind {
                        NodeKind::Data => "data".into(),
                        NodeKind::Action => "action".into(),
                    },
                    label: n.label.clone(),
                    data_type: n.data_type.clone(),
                    data_value: n.data_value.clone(),
                    num_para: n.num_para,
                    declaring_type: n.declaring_type.clone(),
                    change_tag: n.change_tag.wire().map(String::from),
                })
                .collect(),
            edges: g
                .edges
                .iter()
                .map(|e| {
                    let (label, para_index) = match e.label {
                        EdgeLabel::Para(i) => ("para".to_string(), Some(i)),
                        other => (other.to_string(), None),
                    };
                    WireEdge {
                        src: e.src.clone(),
                        dst: e.dst.clone(),
                        label,
                        para_index,
                    }
                })
                .collect(),
            origin: g.origin.clone(),
        }
    }

    fn into_pdg(self) -> Result<Pdg, PdgError> {
        let mut problems = Vec::new();
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for (i, w) in self.nodes.into_iter().enumerate() {
            let kind = match w.kind.as_str() {
                "data" => NodeKind::Data,
                "action" => NodeKind::Action,
                other => {
                    problems.push(format!("nodes[{i}].kind: unknown kind `{other}`"));
                    continue;
                }
            };
            let change_tag = match w.change_tag.as_deref() {
                None => ChangeTag::None,
                Some("unchanged") => ChangeTag::Unchanged,
                Some("deleted") => ChangeTag::Deleted,
                Some("added") => ChangeTag::Added,
                Some(other) => {
                    problems.push(format!("nodes[{i}].changeTag: unknown tag `{other}`"));
                    continue;
                }
            };
            nodes.push(Node {
                id: w.id,
                kind,
                label: w.label,
                data_type: w.data_type,
                data_value: w.data_value,
                num_para: w.num_para,
                declaring_type: w.declaring_type,
                change_tag,
            });
        }
        let mut edges = Vec::with_capacity(self.edges.len());
        for (i, w) in self.edges.into_iter().enumerate() {
            let label = match (w.label.as_str(), w.para_index) {
                ("para", Some(k)) => EdgeLabel::Para(k),
                ("para", None) => {
                    problems.push(format!("edges[{i}].paraIndex: missing for para edge"));
                    continue;
                }
                (_, Some(_)) => {
                    problems.push(format!("edges[{i}].paraIndex: only allowed on para edges"));
                    continue;
                }
                (l @ ("recv" | "def" | "dep" | "cond" | "throw"), None) => {
                    l.parse().expect("listed labels parse")
                }
                (other, None) => {
                    problems.push(format!("edges[{i}].label: unknown label `{other}`"));
                    continue;
                }
            };
            edges.push(Edge {
                src: w.src,
                dst: w.dst,
                label,
            });
        }
        if problems.is_empty() {
            Ok(Pdg {
                nodes,
                edges,
                origin: self.origin,
            })
        } else {
            Err(PdgError::Invalid(problems))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1a_before() -> Pdg {
        // Cursor cursor = cr.query(uri, ...); cursor.moveToFirst();
        Pdg {
            nodes: vec![
                Node::data("cr"),
                Node::data("uri"),
                Node::action("query", "query").with_num_para(1),
                Node::data("cursor").with_type("Cursor"),
                Node::action("mtf", "moveToFirst").with_num_para(0),
            ],
            edges: vec![
                Edge::new("cr", "query", EdgeLabel::Recv),
                Edge::new("uri", "query", EdgeLabel::Para(0)),
                Edge::new("query", "cursor", EdgeLabel::Def),
                Edge::new("cursor", "mtf", EdgeLabel::Recv),
            ],
            origin: None,
        }
    }

    #[test]
    fn empty_graph_is_valid() {
        assert!(Pdg::new().validate().is_empty());
    }

    #[test]
    fn def_from_data_node_is_reported() {
        let g = Pdg {
            nodes: vec![Node::data("a"), Node::data("b")],
            edges: vec![Edge::new("a", "b", EdgeLabel::Def)],
            origin: None,
        };
        let v = g.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("a -def-> b"), "{v:?}");
    }

    #[test]
    fn hand_encoded_fixture_is_valid() {
        assert!(fig1a_before().validate().is_empty());
    }

    #[test]
    fn neighbors_of_move_to_first() {
        let g = fig1a_before();
        let n = g.neighbors("mtf").unwrap();
        assert_eq!(n, BTreeSet::from(["cursor".to_string()]));
        assert_eq!(
            g.neighbors("query").unwrap(),
            BTreeSet::from(["cr".into(), "uri".into(), "cursor".into()])
        );
        assert!(g.neighbors("missing").is_err());
    }

    #[test]
    fn isolated_and_single_def() {
        let g = Pdg {
            nodes: vec![Node::action("a", "f"), Node::data("b"), Node::data("c")],
            edges: vec![Edge::new("a", "b", EdgeLabel::Def)],
            origin: None,
        };
        assert!(g.neighbors("c").unwrap().is_empty());
        assert_eq!(g.neighbors("a").unwrap(), BTreeSet::from(["b".into()]));
    }

    #[test]
    fn round_trip_keeps_everything() {
        let mut g = fig1a_before();
        g.nodes[4].change_tag = ChangeTag::Deleted;
        g.origin = Some(Origin {
            file: Some("a.mj".into()),
            method: Some("load".into()),
            line: Some(3),
        });
        let back = read_pdg(&write_pdg(&g)).unwrap();
        assert_eq!(back, g);
        assert_eq!(read_pdg(&write_pdg(&Pdg::new())).unwrap(), Pdg::new());
    }

    #[test]
    fn dangling_edge_is_rejected_with_its_name() {
        let text = r#"{"nodes":[{"id":"a","kind":"action","label":"f"}],
                       "edges":[{"src":"a","dst":"zz","label":"def"}]}"#;
        let err = Pdg::from_json(text).unwrap_err().to_string();
        assert!(err.contains("a -def-> zz"), "{err}");
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = Pdg::from_json("{\n  \"nodes\": [ {\"id\": 3} ],\n \"edges\": []}").unwrap_err();
        match err {
            PdgError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let err = Pdg::from_json(r#"{"nodes":[],"edges":[{"src":"a","dst":"b","label":"para"}]}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("edges[0].paraIndex"), "{err}");
    }

    #[test]
    fn edge_label_text_round_trip() {
        for l in [
            EdgeLabel::Recv,
            EdgeLabel::Para(0),
            EdgeLabel::Para(12),
            EdgeLabel::Def,
            EdgeLabel::Dep,
            EdgeLabel::Cond,
            EdgeLabel::Throw,
        ] {
            assert_eq!(l.to_string().parse::<EdgeLabel>().unwrap(), l);
        }
        assert!("parax".parse::<EdgeLabel>().is_err());
    }
}
