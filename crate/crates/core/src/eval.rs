//! Rules, their file format, and checking them against graphs by backtracking
//! subgraph matching.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::node_facts;
use crate::lattice::encoding::{
    affix_from_text, affix_to_text, const_from_text, const_to_text, labels_from_text, labels_to_text,
};
use crate::lattice::{NodeFacts, NodePredicates};
use crate::pdg::{EdgeLabel, Origin, Pdg};
use crate::uapdg::{EdgeAtom, QuantifiedConjunct};

/// Variable name to node id. Distinct variables always denote distinct nodes.
pub type Valuation = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    #[serde(default)]
    pub examples: Vec<String>,
    #[serde(default)]
    pub history: Vec<String>,
}

/// `∃x. pre(x) ∧ ¬(post_1(x) ∨ ... ∨ post_k(x))`. With no disjuncts the
/// postcondition is false and the rule fires wherever `pre` holds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub name: String,
    pub pre: QuantifiedConjunct,
    pub post: Vec<QuantifiedConjunct>,
    pub provenance: Provenance,
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("malformed rule file: {0}")]
    Json(#[from] serde_json::Error),
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> RuleError {
    RuleError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

impl Rule {
    pub fn validate(&self) -> Result<(), RuleError> {
        if !self.pre.bound_vars.is_empty() {
            return Err(schema("pre", "precondition variables must all be free"));
        }
        self.pre.validate().map_err(|m| schema("pre", m))?;
        let pre_vars: BTreeSet<&String> = self.pre.free_vars.iter().collect();
        for (i, q) in self.post.iter().enumerate() {
            q.validate().map_err(|m| schema(format!("post[{i}]"), m))?;
            if let Some(v) = q.free_vars.iter().find(|v| !pre_vars.contains(v)) {
                return Err(schema(format!("post[{i}].freeVars"), format!("`{v}` is not a precondition variable")));
            }
            if let Some(v) = q.bound_vars.iter().find(|v| pre_vars.contains(v)) {
                return Err(schema(format!("post[{i}].boundVars"), format!("`{v}` shadows a precondition variable")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rule {}", self.name)?;
        writeln!(f, "  pre({}) := {}", self.pre.free_vars.join(", "), self.pre)?;
        if self.post.is_empty() {
            writeln!(f, "  post := False")?;
        }
        for (i, q) in self.post.iter().enumerate() {
            writeln!(f, "  post{}({}) := {}", i + 1, q.free_vars.join(", "), q)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub origin: Option<Origin>,
    pub rule: String,
    pub valuation: Valuation,
}

impl Detection {
    /// One line: `origin<TAB>rule<TAB>x0=n1,x1=n4`.
    pub fn to_record(&self) -> String {
        let origin = self.origin.as_ref().map_or_else(|| "<unknown>".to_string(), |o| o.to_string());
        let vals: Vec<String> = self.valuation.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("{origin}\t{}\t{}", self.rule, vals.join(","))
    }
}

/// A graph prepared for repeated matching.
pub struct Target<'g> {
    pub graph: &'g Pdg,
    facts: Vec<NodeFacts>,
    edges: HashSet<(usize, usize, EdgeLabel)>,
    ids: HashMap<&'g str, usize>,
    labels: BTreeSet<&'g str>,
}

impl<'g> Target<'g> {
    pub fn new(graph: &'g Pdg) -> Self {
        let idx = graph.index();
        let edges = graph
            .edges
            .iter()
            .zip(&idx.ends)
            .filter(|(_, &(s, _))| s != usize::MAX)
            .map(|(e, &(s, d))| (s, d, e.label))
            .collect();
        Target {
            graph,
            facts: node_facts(graph),
            edges,
            ids: graph.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect(),
            labels: graph.action_labels(),
        }
    }

    fn admits(&self, p: &NodePredicates, i: usize) -> bool {
        p.satisfied_by(&self.graph.nodes[i], &self.facts[i])
    }
}

/// False only when some exact label in `q` names no action of the graph.
pub fn prefilter(g: &Pdg, q: &QuantifiedConjunct) -> bool {
    prefilter_target(&Target::new(g), q)
}

fn prefilter_target(t: &Target<'_>, q: &QuantifiedConjunct) -> bool {
    q.node_atoms
        .values()
        .filter(|p| p.is_action())
        .filter_map(|p| p.exact_label())
        .all(|l| t.labels.contains(l))
}

struct Search<'a, 'g> {
    t: &'a Target<'g>,
    vars: Vec<&'a String>,
    preds: Vec<&'a NodePredicates>,
    /// Per variable: (other variable, label, true when this variable is the source).
    adj: Vec<Vec<(usize, EdgeLabel, bool)>>,
    cand: Vec<Vec<usize>>,
    assign: Vec<Option<usize>>,
    used: Vec<bool>,
}

impl<'a, 'g> Search<'a, 'g> {
    fn new(t: &'a Target<'g>, q: &'a QuantifiedConjunct) -> Self {
        let vars: Vec<&String> = q.all_vars().collect();
        let pos: HashMap<&String, usize> = vars.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let preds: Vec<&NodePredicates> = vars.iter().map(|v| &q.node_atoms[*v]).collect();
        let mut adj = vec![Vec::new(); vars.len()];
        for EdgeAtom { src, label, dst } in &q.edge_atoms {
            let (s, d) = (pos[src], pos[dst]);
            adj[s].push((d, *label, true));
            if s != d {
                adj[d].push((s, *label, false));
            }
        }
        let cand = preds
            .iter()
            .map(|p| (0..t.graph.nodes.len()).filter(|&i| t.admits(p, i)).collect())
            .collect();
        Search {
            t,
            assign: vec![None; vars.len()],
            used: vec![false; t.graph.nodes.len()],
            vars,
            preds,
            adj,
            cand,
        }
    }

    fn consistent(&self, v: usize, n: usize) -> bool {
        if self.used[n] {
            return false;
        }
        self.adj[v].iter().all(|&(o, label, out)| {
            let other = if o == v { Some(n) } else { self.assign[o] };
            match other {
                None => true,
                Some(m) if out => self.t.edges.contains(&(n, m, label)),
                Some(m) => self.t.edges.contains(&(m, n, label)),
            }
        })
    }

    fn pin(&mut self, partial: &Valuation) -> bool {
        for v in 0..self.vars.len() {
            let Some(id) = partial.get(self.vars[v]) else { continue };
            let Some(&n) = self.t.ids.get(id.as_str()) else { return false };
            if !self.t.admits(self.preds[v], n) || !self.consistent(v, n) {
                return false;
            }
            self.assign[v] = Some(n);
            self.used[n] = true;
        }
        true
    }

    /// Calls `found` on every complete assignment until it returns false.
    /// Returns false when stopped early.
    fn run(&mut self, found: &mut dyn FnMut(&[Option<usize>]) -> bool) -> bool {
        let mut best: Option<(usize, usize)> = None;
        for v in 0..self.vars.len() {
            if self.assign[v].is_some() {
                continue;
            }
            let count = self.cand[v].iter().filter(|&&n| self.consistent(v, n)).count();
            if best.map_or(true, |(_, c)| count < c) {
                best = Some((v, count));
            }
        }
        let Some((v, count)) = best else {
            return found(&self.assign);
        };
        if count == 0 {
            return true;
        }
        for k in 0..self.cand[v].len() {
            let n = self.cand[v][k];
            if !self.consistent(v, n) {
                continue;
            }
            self.assign[v] = Some(n);
            self.used[n] = true;
            let go_on = self.run(found);
            self.used[n] = false;
            self.assign[v] = None;
            if !go_on {
                return false;
            }
        }
        true
    }

    fn valuation(&self, assign: &[Option<usize>], partial: &Valuation) -> Valuation {
        let mut out = partial.clone();
        for (v, n) in self.vars.iter().zip(assign) {
            let n = n.expect("complete assignment");
            out.insert((*v).clone(), self.t.graph.nodes[n].id.clone());
        }
        out
    }
}

/// First valuation extending `partial` that satisfies `q` on `g`.
pub fn match_conjunct(g: &Pdg, q: &QuantifiedConjunct, partial: &Valuation) -> Option<Valuation> {
    match_in(&Target::new(g), q, partial)
}

pub fn match_in(t: &Target<'_>, q: &QuantifiedConjunct, partial: &Valuation) -> Option<Valuation> {
    if !prefilter_target(t, q) {
        return None;
    }
    let mut s = Search::new(t, q);
    if !s.pin(partial) {
        return None;
    }
    let mut first = None;
    s.run(&mut |a| {
        first = Some(a.to_vec());
        false
    });
    first.map(|a| s.valuation(&a, partial))
}

/// Every valuation of `q` on the graph, in search order, capped at `limit`.
pub fn all_matches(t: &Target<'_>, q: &QuantifiedConjunct, limit: usize) -> Vec<Valuation> {
    if !prefilter_target(t, q) {
        return Vec::new();
    }
    let mut s = Search::new(t, q);
    let mut found = Vec::new();
    s.run(&mut |a| {
        found.push(a.to_vec());
        found.len() < limit
    });
    let mut seen = BTreeSet::new();
    found
        .into_iter()
        .map(|a| s.valuation(&a, &Valuation::new()))
        .filter(|v| seen.insert(v.clone()))
        .collect()
}

/// Upper bound on precondition models enumerated per graph.
pub const MAX_MODELS: usize = 10_000;

/// Precondition models of `r` on `t` that no postcondition disjunct repairs.
pub fn violations(t: &Target<'_>, r: &Rule) -> Vec<Valuation> {
    all_matches(t, &r.pre, MAX_MODELS)
        .into_iter()
        .filter(|v| !r.post.iter().any(|q| post_holds(t, q, v)))
        .collect()
}

/// Whether disjunct `q` holds with its free variables fixed by `v`.
pub fn post_holds(t: &Target<'_>, q: &QuantifiedConjunct, v: &Valuation) -> bool {
    let pins: Valuation = q
        .free_vars
        .iter()
        .filter_map(|x| v.get(x).map(|n| (x.clone(), n.clone())))
        .collect();
    match_in(t, q, &pins).is_some()
}

pub fn check_rule(g: &Pdg, r: &Rule) -> Vec<Detection> {
    let t = Target::new(g);
    violations(&t, r)
        .into_iter()
        .map(|valuation| Detection {
            origin: g.origin.clone(),
            rule: r.name.clone(),
            valuation,
        })
        .collect()
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
struct WirePred {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data_value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_para: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    declaring_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trans_control_dep: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_ignored: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
struct WireConjunct {
    free_vars: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bound_vars: Option<Vec<String>>,
    nodes: BTreeMap<String, WirePred>,
    edges: Vec<(String, String, String)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRule {
    name: String,
    pre: WireConjunct,
    post: Vec<WireConjunct>,
    #[serde(default)]
    provenance: Provenance,
}

fn pred_to_wire(p: &NodePredicates) -> WirePred {
    WirePred {
        kind: const_to_text(&p.kind),
        label: const_to_text(&p.label),
        data_type: affix_to_text(&p.data_type),
        data_value: const_to_text(&p.data_value),
        num_para: const_to_text(&p.num_para),
        declaring_type: affix_to_text(&p.declaring_type),
        trans_control_dep: labels_to_text(&p.trans_control_dep),
        output_ignored: const_to_text(&p.output_ignored),
    }
}

fn pred_from_wire(w: &WirePred, path: &str) -> Result<NodePredicates, RuleError> {
    fn field<T>(
        v: &Option<String>,
        path: &str,
        name: &str,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, RuleError>
    where
        T: Default,
    {
        match v {
            None => Ok(T::default()),
            Some(s) => parse(s).map_err(|m| schema(format!("{path}.{name}"), m)),
        }
    }
    Ok(NodePredicates {
        kind: field(&w.kind, path, "kind", const_from_text)?,
        label: field(&w.label, path, "label", const_from_text)?,
        data_type: field(&w.data_type, path, "dataType", affix_from_text)?,
        data_value: field(&w.data_value, path, "dataValue", const_from_text)?,
        num_para: field(&w.num_para, path, "numPara", const_from_text)?,
        declaring_type: field(&w.declaring_type, path, "declaringType", affix_from_text)?,
        trans_control_dep: field(&w.trans_control_dep, path, "transControlDep", labels_from_text)?,
        output_ignored: field(&w.output_ignored, path, "outputIgnored", const_from_text)?,
    })
}

fn conjunct_to_wire(q: &QuantifiedConjunct, with_bound: bool) -> WireConjunct {
    WireConjunct {
        free_vars: q.free_vars.clone(),
        bound_vars: with_bound.then(|| q.bound_vars.clone()),
        nodes: q.node_atoms.iter().map(|(k, p)| (k.clone(), pred_to_wire(p))).collect(),
        edges: q
            .edge_atoms
            .iter()
            .map(|e| (e.src.clone(), e.label.to_string(), e.dst.clone()))
            .collect(),
    }
}

fn conjunct_from_wire(w: &WireConjunct, path: &str) -> Result<QuantifiedConjunct, RuleError> {
    let mut node_atoms = BTreeMap::new();
    for (k, p) in &w.nodes {
        node_atoms.insert(k.clone(), pred_from_wire(p, &format!("{path}.nodes.{k}"))?);
    }
    let mut edge_atoms = BTreeSet::new();
    for (i, (s, l, d)) in w.edges.iter().enumerate() {
        let label: EdgeLabel = l.parse().map_err(|m: String| schema(format!("{path}.edges[{i}]"), m))?;
        edge_atoms.insert(EdgeAtom {
            src: s.clone(),
            label,
            dst: d.clone(),
        });
    }
    Ok(QuantifiedConjunct {
        free_vars: w.free_vars.clone(),
        bound_vars: w.bound_vars.clone().unwrap_or_default(),
        node_atoms,
        edge_atoms,
    })
}

pub fn read_rule(bytes: &[u8]) -> Result<Rule, RuleError> {
    let w: WireRule = serde_json::from_slice(bytes)?;
    if w.pre.bound_vars.is_some() {
        return Err(schema("pre.boundVars", "precondition variables must all be free"));
    }
    let pre = conjunct_from_wire(&w.pre, "pre")?;
    let post = w
        .post
        .iter()
        .enumerate()
        .map(|(i, q)| conjunct_from_wire(q, &format!("post[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let r = Rule {
        name: w.name,
        pre,
        post,
        provenance: w.provenance,
    };
    r.validate()?;
    Ok(r)
}

/// Canonical bytes: pretty JSON with sorted maps and a trailing newline.
pub fn write_rule(r: &Rule) -> Vec<u8> {
    let w = WireRule {
        name: r.name.clone(),
        pre: conjunct_to_wire(&r.pre, false),
        post: r.post.iter().map(|q| conjunct_to_wire(q, true)).collect(),
        provenance: r.provenance.clone(),
    };
    let mut out = serde_json::to_vec_pretty(&w).expect("rule serializes");
    out.push(b'\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{build_pdg, MethodSource};
    use crate::lattice::{AffixLattice, ConstLattice, LabelSetLattice};
    use crate::pdg::NodeKind;

    fn pdg(src: &str) -> Pdg {
        build_pdg(&MethodSource::new("t.mj", src)).unwrap()
    }

    fn pred(kind: NodeKind) -> NodePredicates {
        NodePredicates {
            kind: ConstLattice::Exactly(kind),
            ..NodePredicates::default()
        }
    }

    /// pre(x0, x1): a Cursor receiving a `moveToFirst` whose result is ignored.
    pub(crate) fn move_to_first_pre() -> QuantifiedConjunct {
        let mut x0 = pred(NodeKind::Data);
        x0.data_type = AffixLattice::Exact("Cursor".into());
        let mut x1 = pred(NodeKind::Action);
        x1.label = ConstLattice::Exactly("moveToFirst".into());
        x1.num_para = ConstLattice::Exactly(0);
        x1.output_ignored = ConstLattice::Exactly(true);
        QuantifiedConjunct {
            free_vars: vec!["x0".into(), "x1".into()],
            bound_vars: vec![],
            node_atoms: BTreeMap::from([("x0".into(), x0), ("x1".into(), x1)]),
            edge_atoms: BTreeSet::from([EdgeAtom {
                src: "x0".into(),
                label: EdgeLabel::Recv,
                dst: "x1".into(),
            }]),
        }
    }

    fn rule(post: Vec<QuantifiedConjunct>) -> Rule {
        Rule {
            name: "check-movetofirst".into(),
            pre: move_to_first_pre(),
            post,
            provenance: Provenance::default(),
        }
    }

    const BUGGY: &str = "Cursor c = db.query(); c.moveToFirst(); String s = c.getString(0);";
    const FIXED: &str = "Cursor c = db.query(); if (!c.moveToFirst()) { return; } String s = c.getString(0);";

    #[test]
    fn empty_conjunct_returns_partial() {
        let g = pdg(BUGGY);
        let partial = Valuation::from([("z".into(), "n0".into())]);
        assert_eq!(match_conjunct(&g, &QuantifiedConjunct::default(), &partial), Some(partial));
    }

    #[test]
    fn ignored_result_matches_and_used_result_does_not() {
        let g = pdg(BUGGY);
        let v = match_conjunct(&g, &move_to_first_pre(), &Valuation::new()).unwrap();
        assert_eq!(g.node(&v["x1"]).unwrap().label_str(), "moveToFirst");
        assert_eq!(g.node(&v["x0"]).unwrap().data_type.as_deref(), Some("Cursor"));
        assert_eq!(match_conjunct(&pdg(FIXED), &move_to_first_pre(), &Valuation::new()), None);
    }

    #[test]
    fn prefilter_rejects_missing_labels_only() {
        let g = pdg("int x = a.size();");
        assert!(!prefilter(&g, &move_to_first_pre()));
        let mut q = QuantifiedConjunct::default();
        q.free_vars.push("x".into());
        q.node_atoms.insert("x".into(), NodePredicates::top());
        assert!(prefilter(&g, &q));
    }

    #[test]
    fn rule_without_post_fires_on_every_model() {
        let d = check_rule(&pdg(BUGGY), &rule(vec![]));
        assert_eq!(d.len(), 1);
        assert!(check_rule(&pdg(FIXED), &rule(vec![])).is_empty());
        assert!(check_rule(&Pdg::default(), &rule(vec![])).is_empty());
    }

    #[test]
    fn post_disjunct_suppresses_detection() {
        // post(x0): the cursor also receives a `getCount` call.
        let mut y = pred(NodeKind::Action);
        y.label = ConstLattice::Exactly("getCount".into());
        let mut x0 = pred(NodeKind::Data);
        x0.data_type = AffixLattice::Exact("Cursor".into());
        let post = QuantifiedConjunct {
            free_vars: vec!["x0".into()],
            bound_vars: vec!["y0".into()],
            node_atoms: BTreeMap::from([("x0".into(), x0), ("y0".into(), y)]),
            edge_atoms: BTreeSet::from([EdgeAtom {
                src: "x0".into(),
                label: EdgeLabel::Recv,
                dst: "y0".into(),
            }]),
        };
        let r = rule(vec![post]);
        assert_eq!(check_rule(&pdg(BUGGY), &r).len(), 1);
        let ok = pdg("Cursor c = db.query(); if (c.getCount() > 0) { c.moveToFirst(); }");
        assert!(check_rule(&ok, &r).is_empty());
    }

    #[test]
    fn rule_files_round_trip() {
        let mut r = rule(vec![]);
        let bytes = write_rule(&r);
        assert_eq!(read_rule(&bytes).unwrap(), r);
        assert_eq!(write_rule(&read_rule(&bytes).unwrap()), bytes);
        let mut y = NodePredicates::top();
        y.trans_control_dep = LabelSetLattice::Set(BTreeSet::from(["IF".to_string()]));
        y.declaring_type = AffixLattice::Pattern {
            prefix: "java.".into(),
            suffix: "Exception".into(),
        };
        r.post.push(QuantifiedConjunct {
            free_vars: vec!["x1".into()],
            bound_vars: vec!["y0".into()],
            node_atoms: BTreeMap::from([("x1".into(), r.pre.node_atoms["x1"].clone()), ("y0".into(), y)]),
            edge_atoms: BTreeSet::from([EdgeAtom {
                src: "x1".into(),
                label: EdgeLabel::Para(2),
                dst: "y0".into(),
            }]),
        });
        r.provenance.examples.push("a/before.mj".into());
        let bytes = write_rule(&r);
        assert_eq!(read_rule(&bytes).unwrap(), r);
    }

    #[test]
    fn post_free_var_outside_pre_is_rejected() {
        let mut r = rule(vec![]);
        r.post.push(QuantifiedConjunct {
            free_vars: vec!["x9".into()],
            bound_vars: vec![],
            node_atoms: BTreeMap::from([("x9".into(), NodePredicates::top())]),
            edge_atoms: BTreeSet::new(),
        });
        let err = read_rule(&write_rule(&r)).unwrap_err();
        assert!(err.to_string().starts_with("post[0].freeVars"), "{err}");
    }

    #[test]
    fn bad_field_reports_its_path() {
        let text = String::from_utf8(write_rule(&rule(vec![]))).unwrap();
        let broken = text.replace("\"exact:0\"", "\"exact:zero\"");
        let err = read_rule(broken.as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "pre.nodes.x1.numPara: cannot parse value `zero`");
    }

    #[test]
    fn detection_record_is_one_line() {
        let d = check_rule(&pdg(BUGGY), &rule(vec![]));
        let rec = d[0].to_record();
        assert!(rec.starts_with("t.mj"));
        assert!(rec.contains("\tcheck-movetofirst\tx0="));
        assert!(!rec.contains('\n'));
    }
}
