//! Brute-force reference implementations and generators shared by the
//! oracle suites.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rulesynth::align::{AlignmentProblem, GraphView, Mode, ViewEdge, ViewNode};
use rulesynth::eval::{Provenance, Rule, Valuation};
use rulesynth::frontend::node_facts;
use rulesynth::pdg::{ChangeTag, EdgeLabel, NodeKind, Pdg};
use rulesynth::uapdg::{QuantifiedConjunct, Vpdg};

use super::{random_conjunct, random_pdg};

const LABELS: [&str; 3] = ["a", "b", "c"];
const EDGE_LABELS: [EdgeLabel; 4] = [EdgeLabel::Recv, EdgeLabel::Para(0), EdgeLabel::Para(1), EdgeLabel::Def];
const TAGS: [ChangeTag; 3] = [ChangeTag::Unchanged, ChangeTag::Added, ChangeTag::Deleted];

pub fn random_graph(rng: &mut ChaCha8Rng, max_nodes: usize, max_edges: usize) -> GraphView {
    let n = rng.gen_range(1..=max_nodes);
    let nodes: Vec<ViewNode> = (0..n)
        .map(|_| {
            if rng.gen_bool(0.5) {
                ViewNode {
                    kind: NodeKind::Action,
                    label: Some(LABELS[rng.gen_range(0..LABELS.len())].to_string()),
                    tag: TAGS[rng.gen_range(0..TAGS.len())],
                }
            } else {
                ViewNode {
                    kind: NodeKind::Data,
                    label: None,
                    tag: TAGS[rng.gen_range(0..TAGS.len())],
                }
            }
        })
        .collect();
    let mut seen = BTreeSet::new();
    let mut edges = Vec::new();
    if n > 1 {
        for _ in 0..rng.gen_range(0..=max_edges) {
            let src = rng.gen_range(0..n);
            let dst = rng.gen_range(0..n);
            let label = EDGE_LABELS[rng.gen_range(0..EDGE_LABELS.len())];
            if src != dst && seen.insert((src, dst, label)) {
                edges.push(ViewEdge { src, dst, label });
            }
        }
    }
    GraphView { nodes, edges }
}

pub fn compatible(p: &AlignmentProblem, i: usize, j: usize) -> bool {
    let (a, b) = (&p.g1.nodes[i], &p.g2.nodes[j]);
    a.kind == b.kind
        && (a.kind == NodeKind::Data
            || (a.label == b.label && (p.mode == Mode::Postcondition || a.tag == b.tag)))
}

/// Best objective over every injective partial node map that honours the rules.
pub fn brute_force(p: &AlignmentProblem) -> i64 {
    fn score(p: &AlignmentProblem, map: &[Option<usize>]) -> Option<i64> {
        for &(i, j) in &p.pins {
            if map[i] != Some(j) {
                return None;
            }
        }
        let mut covered = vec![false; map.len()];
        let mut edges = 0;
        for e1 in &p.g1.edges {
            let hit = p.g2.edges.iter().any(|e2| {
                e1.label == e2.label && map[e1.src] == Some(e2.src) && map[e1.dst] == Some(e2.dst)
            });
            if hit {
                edges += 1;
                covered[e1.src] = true;
                covered[e1.dst] = true;
            }
        }
        for (i, m) in map.iter().enumerate() {
            if m.is_some() && p.g1.nodes[i].kind == NodeKind::Data && !covered[i] && !p.pins.iter().any(|&(a, _)| a == i) {
                return None;
            }
        }
        Some(map.iter().filter(|m| m.is_some()).count() as i64 + edges)
    }
    fn go(p: &AlignmentProblem, i: usize, map: &mut Vec<Option<usize>>, used: &mut Vec<bool>, best: &mut i64) {
        if i == p.g1.nodes.len() {
            if let Some(s) = score(p, map) {
                *best = (*best).max(s);
            }
            return;
        }
        map.push(None);
        go(p, i + 1, map, used, best);
        map.pop();
        for j in 0..p.g2.nodes.len() {
            if !used[j] && compatible(p, i, j) {
                used[j] = true;
                map.push(Some(j));
                go(p, i + 1, map, used, best);
                map.pop();
                used[j] = false;
            }
        }
    }
    let mut best = -1;
    go(p, 0, &mut Vec::new(), &mut vec![false; p.g2.nodes.len()], &mut best);
    best
}

/// All injective extensions of `fixed` to the conjunct's variables that satisfy it.
pub fn brute_models(g: &Pdg, q: &QuantifiedConjunct, fixed: &Valuation) -> Vec<Valuation> {
    let facts = node_facts(g);
    let vars: Vec<&String> = q.all_vars().filter(|v| !fixed.contains_key(*v)).collect();
    let mut out = Vec::new();
    let n = g.nodes.len();
    let mut choice = vec![0usize; vars.len()];
    'outer: loop {
        let mut val: Valuation = q
            .all_vars()
            .filter_map(|v| fixed.get(v).map(|id| (v.clone(), id.clone())))
            .collect();
        for (v, &c) in vars.iter().zip(&choice) {
            val.insert((*v).clone(), g.nodes[c].id.clone());
        }
        let ids: BTreeSet<&String> = val.values().collect();
        let ok = ids.len() == val.len()
            && q.node_atoms.iter().all(|(v, p)| {
                let i = g.nodes.iter().position(|x| x.id == val[v]).unwrap();
                p.satisfied_by(&g.nodes[i], &facts[i])
            })
            && q.edge_atoms.iter().all(|e| {
                g.edges
                    .iter()
                    .any(|x| x.src == val[&e.src] && x.dst == val[&e.dst] && x.label == e.label)
            });
        if ok {
            out.push(val);
        }
        for k in 0..vars.len() {
            choice[k] += 1;
            if choice[k] < n {
                continue 'outer;
            }
            choice[k] = 0;
        }
        break;
    }
    out
}

pub fn brute_check(g: &Pdg, r: &Rule) -> BTreeSet<Valuation> {
    brute_models(g, &r.pre, &Valuation::new())
        .into_iter()
        .filter(|m| {
            !r.post.iter().any(|q| {
                let pins: Valuation = q.free_vars.iter().map(|v| (v.clone(), m[v].clone())).collect();
                !brute_models(g, q, &pins).is_empty()
            })
        })
        .collect()
}

pub fn random_rule(rng: &mut ChaCha8Rng) -> Rule {
    let src = random_pdg(rng, 6);
    let k = rng.gen_range(1..=3);
    let vars: Vec<String> = (0..k).map(|i| format!("x{i}")).collect();
    let pre = random_conjunct(rng, &src, &vars, 0);
    let post = (0..rng.gen_range(0..=2))
        .map(|_| {
            let free: Vec<String> = vars.iter().filter(|_| rng.gen_bool(0.6)).cloned().collect();
            let other = random_pdg(rng, 6);
            let bound = rng.gen_range(0..=(4 - free.len()).min(2));
            random_conjunct(rng, &other, &free, bound)
        })
        .collect();
    Rule {
        name: "r".into(),
        pre,
        post,
        provenance: Provenance::default(),
    }
}

/// Freezes `n0` (always an action labelled `a`) and maybe one more same-label
/// action to shared free variables.
pub fn valuate(rng: &mut ChaCha8Rng, max_nodes: usize) -> Vpdg {
    let g = random_pdg(rng, max_nodes);
    let mut val = BTreeMap::from([("n0".to_string(), "x0".to_string())]);
    if rng.gen_bool(0.5) {
        if let Some(n) = g.nodes.iter().skip(1).find(|n| n.label.as_deref() == Some("b")) {
            val.insert(n.id.clone(), "x1".into());
        }
    }
    Vpdg::new(g, val).unwrap()
}

