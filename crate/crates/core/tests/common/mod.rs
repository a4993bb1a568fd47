#![allow(dead_code)]

pub mod oracle;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rulesynth::lattice::{AffixLattice, ConstLattice, LabelSetLattice, NodePredicates};
use rulesynth::pdg::{Edge, EdgeLabel, Node, Pdg};
use rulesynth::uapdg::{EdgeAtom, QuantifiedConjunct};

pub const ACTIONS: [&str; 4] = ["a", "b", "IF", "getX"];
pub const TYPES: [&str; 3] = ["Cursor", "CursorWrapper", "int"];
pub const EDGES: [EdgeLabel; 5] = [
    EdgeLabel::Recv,
    EdgeLabel::Para(0),
    EdgeLabel::Def,
    EdgeLabel::Dep,
    EdgeLabel::Cond,
];

/// Small random graph; node `n0` is always an action labelled `a`.
pub fn random_pdg(rng: &mut ChaCha8Rng, max_nodes: usize) -> Pdg {
    let n = rng.gen_range(1..=max_nodes);
    let mut nodes = Vec::new();
    for i in 0..n {
        let id = format!("n{i}");
        if i == 0 || rng.gen_bool(0.5) {
            let label = if i == 0 { "a" } else { ACTIONS[rng.gen_range(0..ACTIONS.len())] };
            let mut node = Node::action(id, label).with_num_para(rng.gen_range(0..2));
            if rng.gen_bool(0.3) {
                node = node.with_declaring_type("Util");
            }
            nodes.push(node);
        } else {
            let mut node = Node::data(id).with_type(TYPES[rng.gen_range(0..TYPES.len())]);
            if rng.gen_bool(0.3) {
                node = node.with_value(rng.gen_range(0..2).to_string());
            }
            nodes.push(node);
        }
    }
    let mut seen = BTreeSet::new();
    let mut edges = Vec::new();
    if n > 1 {
        for _ in 0..rng.gen_range(0..=2 * n) {
            let s = rng.gen_range(0..n);
            let d = rng.gen_range(0..n);
            let l = EDGES[rng.gen_range(0..EDGES.len())];
            if s != d && seen.insert((s, d, l)) {
                edges.push(Edge::new(format!("n{s}"), format!("n{d}"), l));
            }
        }
    }
    Pdg {
        nodes,
        edges,
        origin: None,
    }
}

fn loosen(rng: &mut ChaCha8Rng, p: &mut NodePredicates) {
    if rng.gen_bool(0.4) {
        p.label = ConstLattice::Top;
    }
    if rng.gen_bool(0.3) {
        p.data_type = match &p.data_type {
            AffixLattice::Exact(s) if s.starts_with("Cursor") => AffixLattice::Pattern {
                prefix: "Cursor".into(),
                suffix: String::new(),
            },
            _ => AffixLattice::Top,
        };
    }
    if rng.gen_bool(0.5) {
        p.num_para = ConstLattice::Top;
    }
    if rng.gen_bool(0.5) {
        p.output_ignored = ConstLattice::Bot;
    }
    if rng.gen_bool(0.5) {
        p.trans_control_dep = LabelSetLattice::Set(BTreeSet::new());
    }
    if rng.gen_bool(0.2) {
        p.kind = ConstLattice::Top;
    }
}

/// A conjunct read off a random subset of `g`, with some atoms loosened.
pub fn random_conjunct(rng: &mut ChaCha8Rng, g: &Pdg, vars: &[String], bound: usize) -> QuantifiedConjunct {
    let facts = rulesynth::frontend::node_facts(g);
    let total = vars.len() + bound;
    let mut picks: Vec<usize> = (0..g.nodes.len()).collect();
    for i in (1..picks.len()).rev() {
        picks.swap(i, rng.gen_range(0..=i));
    }
    let names: Vec<String> = vars
        .iter()
        .cloned()
        .chain((0..bound).map(|k| format!("y{k}")))
        .collect();
    let mut q = QuantifiedConjunct {
        free_vars: vars.to_vec(),
        bound_vars: names[vars.len()..].to_vec(),
        node_atoms: BTreeMap::new(),
        edge_atoms: BTreeSet::new(),
    };
    for (k, name) in names.iter().enumerate().take(total) {
        let mut p = match picks.get(k) {
            Some(&i) => NodePredicates::from_node(&g.nodes[i], &facts[i]),
            None => NodePredicates::top(),
        };
        loosen(rng, &mut p);
        q.node_atoms.insert(name.clone(), p);
    }
    let pos: BTreeMap<String, usize> = names
        .iter()
        .enumerate()
        .filter_map(|(k, _)| picks.get(k).map(|&i| (format!("n{i}"), k)))
        .collect();
    for e in &g.edges {
        if let (Some(&s), Some(&d)) = (pos.get(&e.src), pos.get(&e.dst)) {
            if rng.gen_bool(0.6) {
                q.edge_atoms.insert(EdgeAtom {
                    src: names[s].clone(),
                    label: e.label,
                    dst: names[d].clone(),
                });
            }
        }
    }
    q
}
