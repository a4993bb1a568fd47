//! Lattice-valued node predicates: the three lattice families, their joins,
//! satisfaction against concrete nodes and the compact text encoding used in
//! rule files.

use std::collections::BTreeSet;
use std::fmt;

use crate::pdg::{Node, NodeKind};

/// Flat lattice over `V`: nothing, one exact value, or anything.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum ConstLattice<V> {
    #[default]
    Bot,
    Exactly(V),
    Top,
}

impl<V: Clone + PartialEq> ConstLattice<V> {
    pub fn join(&self, other: &Self) -> Self {
        match (self, other) {
            (ConstLattice::Bot, x) | (x, ConstLattice::Bot) => x.clone(),
            (ConstLattice::Exactly(a), ConstLattice::Exactly(b)) if a == b => self.clone(),
            _ => ConstLattice::Top,
        }
    }

    /// An absent attribute (`None`) satisfies any constraint.
    pub fn admits(&self, v: Option<&V>) -> bool {
        match (self, v) {
            (ConstLattice::Exactly(want), Some(have)) => want == have,
            _ => true,
        }
    }

    pub fn of(v: Option<V>) -> Self {
        v.map_or(ConstLattice::Bot, ConstLattice::Exactly)
    }

    pub fn is_informative(&self) -> bool {
        matches!(self, ConstLattice::Exactly(_))
    }
}

/// String patterns of the form `prefix*suffix`, plus an exact-match form.
///
/// A pattern admits every string that starts with `prefix` and ends with
/// `suffix`; the two may overlap inside a short string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum AffixLattice {
    #[default]
    Bot,
    Exact(String),
    Pattern { prefix: String, suffix: String },
    Top,
}

fn common_prefix<'a>(a: &'a str, b: &str) -> &'a str {
    let n = a
        .char_indices()
        .zip(b.chars())
        .take_while(|((_, x), y)| x == y)
        .last()
        .map_or(0, |((i, c), _)| i + c.len_utf8());
    &a[..n]
}

fn common_suffix<'a>(a: &'a str, b: &str) -> &'a str {
    let n = a
        .char_indices()
        .rev()
        .zip(b.chars().rev())
        .take_while(|((_, x), y)| x == y)
        .last()
        .map_or(a.len(), |((i, _), _)| i);
    &a[n..]
}

impl AffixLattice {
    fn ends(&self) -> Option<(&str, &str)> {
        match self {
            AffixLattice::Exact(s) => Some((s, s)),
            AffixLattice::Pattern { prefix, suffix } => Some((prefix, suffix)),
            _ => None,
        }
    }

    pub fn join(&self, other: &Self) -> Self {
        match (self, other) {
            (AffixLattice::Bot, x) | (x, AffixLattice::Bot) => x.clone(),
            (AffixLattice::Top, _) | (_, AffixLattice::Top) => AffixLattice::Top,
            (AffixLattice::Exact(a), AffixLattice::Exact(b)) if a == b => self.clone(),
            _ => {
                let (p1, s1) = self.ends().expect("non-extremal");
                let (p2, s2) = other.ends().expect("non-extremal");
                let prefix = common_prefix(p1, p2);
                let suffix = common_suffix(s1, s2);
                if prefix.is_empty() && suffix.is_empty() {
                    AffixLattice::Top
                } else {
                    AffixLattice::Pattern {
                        prefix: prefix.to_string(),
                        suffix: suffix.to_string(),
                    }
                }
            }
        }
    }

    pub fn admits(&self, v: Option<&str>) -> bool {
        match (self, v) {
            (AffixLattice::Exact(want), Some(have)) => want == have,
            (AffixLattice::Pattern { prefix, suffix }, Some(have)) => {
                have.starts_with(prefix.as_str()) && have.ends_with(suffix.as_str())
            }
            _ => true,
        }
    }

    pub fn of(v: Option<&str>) -> Self {
        v.map_or(AffixLattice::Bot, |s| AffixLattice::Exact(s.to_string()))
    }

    pub fn is_informative(&self) -> bool {
        matches!(self, AffixLattice::Exact(_) | AffixLattice::Pattern { .. })
    }
}

/// Sets of enclosing control labels, ordered by reverse inclusion.
/// `Set(∅)` is the top element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum LabelSetLattice {
    #[default]
    Bot,
    Set(BTreeSet<String>),
}

impl LabelSetLattice {
    pub fn join(&self, other: &Self) -> Self {
        match (self, other) {
            (LabelSetLattice::Bot, x) | (x, LabelSetLattice::Bot) => x.clone(),
            (LabelSetLattice::Set(a), LabelSetLattice::Set(b)) => {
                LabelSetLattice::Set(a.intersection(b).cloned().collect())
            }
        }
    }

    pub fn admits(&self, have: &BTreeSet<String>) -> bool {
        match self {
            LabelSetLattice::Bot => true,
            LabelSetLattice::Set(want) => want.is_subset(have),
        }
    }

    pub fn is_informative(&self) -> bool {
        matches!(self, LabelSetLattice::Set(s) if !s.is_empty())
    }
}

/// The predicate bundle attached to one formula variable.
///
/// `kind` keeps data and action variables apart; alignment never pairs nodes
/// of different kinds, so it stays exact through every join.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct NodePredicates {
    pub kind: ConstLattice<NodeKind>,
    pub label: ConstLattice<String>,
    pub data_type: AffixLattice,
    pub data_value: ConstLattice<String>,
    pub num_para: ConstLattice<u32>,
    pub declaring_type: AffixLattice,
    pub trans_control_dep: LabelSetLattice,
    pub output_ignored: ConstLattice<bool>,
}

/// Attributes of a concrete node that are derived from its graph context.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NodeFacts {
    pub output_ignored: Option<bool>,
    pub trans_control_dep: BTreeSet<String>,
}

impl NodePredicates {
    /// The most precise bundle describing `n`; absent attributes become Bot.
    pub fn from_node(n: &Node, facts: &NodeFacts) -> Self {
        NodePredicates {
            kind: ConstLattice::Exactly(n.kind),
            label: ConstLattice::of(n.label.clone()),
            data_type: AffixLattice::of(n.data_type.as_deref()),
            data_value: ConstLattice::of(n.data_value.clone()),
            num_para: ConstLattice::of(n.num_para),
            declaring_type: AffixLattice::of(n.declaring_type.as_deref()),
            trans_control_dep: LabelSetLattice::Set(facts.trans_control_dep.clone()),
            output_ignored: ConstLattice::of(facts.output_ignored),
        }
    }

    pub fn top() -> Self {
        NodePredicates {
            kind: ConstLattice::Top,
            label: ConstLattice::Top,
            data_type: AffixLattice::Top,
            data_value: ConstLattice::Top,
            num_para: ConstLattice::Top,
            declaring_type: AffixLattice::Top,
            trans_control_dep: LabelSetLattice::Set(BTreeSet::new()),
            output_ignored: ConstLattice::Top,
        }
    }

    pub fn join(&self, other: &Self) -> Self {
        NodePredicates {
            kind: self.kind.join(&other.kind),
            label: self.label.join(&other.label),
            data_type: self.data_type.join(&other.data_type),
            data_value: self.data_value.join(&other.data_value),
            num_para: self.num_para.join(&other.num_para),
            declaring_type: self.declaring_type.join(&other.declaring_type),
            trans_control_dep: self.trans_control_dep.join(&other.trans_control_dep),
            output_ignored: self.output_ignored.join(&other.output_ignored),
        }
    }

    /// Top and Bot fields impose nothing, and neither does an attribute the
    /// node does not carry.
    pub fn satisfied_by(&self, n: &Node, facts: &NodeFacts) -> bool {
        self.kind.admits(Some(&n.kind))
            && self.label.admits(n.label.as_ref())
            && self.data_type.admits(n.data_type.as_deref())
            && self.data_value.admits(n.data_value.as_ref())
            && self.num_para.admits(n.num_para.as_ref())
            && self.declaring_type.admits(n.declaring_type.as_deref())
            && self.trans_control_dep.admits(&facts.trans_control_dep)
            && self.output_ignored.admits(facts.output_ignored.as_ref())
    }

    pub fn exact_label(&self) -> Option<&str> {
        match &self.label {
            ConstLattice::Exactly(l) => Some(l),
            _ => None,
        }
    }

    pub fn is_action(&self) -> bool {
        self.kind == ConstLattice::Exactly(NodeKind::Action)
    }

    /// Human-readable atoms for variable `var`, skipping uninformative fields.
    pub fn atoms(&self, var: &str) -> Vec<String> {
        let mut out = Vec::new();
        if let ConstLattice::Exactly(l) = &self.label {
            out.push(format!("label({var}) = \"{l}\""));
        }
        match &self.data_type {
            AffixLattice::Exact(t) => out.push(format!("data-type({var}) = \"{t}\"")),
            AffixLattice::Pattern { prefix, suffix } => {
                out.push(format!("data-type({var}) = \"{prefix}*{suffix}\""))
            }
            _ => {}
        }
        if let ConstLattice::Exactly(v) = &self.data_value {
            out.push(format!("data-value({var}) = \"{v}\""));
        }
        if let ConstLattice::Exactly(k) = &self.num_para {
            out.push(format!("num-para({var}) = {k}"));
        }
        match &self.declaring_type {
            AffixLattice::Exact(t) => out.push(format!("declaring-type({var}) = \"{t}\"")),
            AffixLattice::Pattern { prefix, suffix } => {
                out.push(format!("declaring-type({var}) = \"{prefix}*{suffix}\""))
            }
            _ => {}
        }
        if let LabelSetLattice::Set(s) = &self.trans_control_dep {
            if !s.is_empty() {
                let items: Vec<&str> = s.iter().map(String::as_str).collect();
                out.push(format!(
                    "trans-control-dep({var}) ⊇ {{{}}}",
                    items.join(", ")
                ));
            }
        }
        match self.output_ignored {
            ConstLattice::Exactly(true) => out.push(format!("output-ignored({var})")),
            ConstLattice::Exactly(false) => out.push(format!("!output-ignored({var})")),
            _ => {}
        }
        out
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeKind::Data => "data",
            NodeKind::Action => "action",
        })
    }
}

/// Encoding of single fields in rule files: `*`, `exact:v`, `affix:p*s`,
/// `subset:[a,b]`; Bot is represented by omitting the field.
pub mod encoding {
    use super::*;

    pub fn const_to_text<V: ToString>(c: &ConstLattice<V>) -> Option<String> {
        match c {
            ConstLattice::Bot => None,
            ConstLattice::Top => Some("*".into()),
            ConstLattice::Exactly(v) => Some(format!("exact:{}", v.to_string())),
        }
    }

    pub fn const_from_text<V: std::str::FromStr>(s: &str) -> Result<ConstLattice<V>, String> {
        if s == "*" {
            return Ok(ConstLattice::Top);
        }
        let v = s
            .strip_prefix("exact:")
            .ok_or_else(|| format!("expected `*` or `exact:...`, got `{s}`"))?;
        v.parse()
            .map(ConstLattice::Exactly)
            .map_err(|_| format!("cannot parse value `{v}`"))
    }

    pub fn affix_to_text(a: &AffixLattice) -> Option<String> {
        match a {
            AffixLattice::Bot => None,
            AffixLattice::Top => Some("*".into()),
            AffixLattice::Exact(v) => Some(format!("exact:{v}")),
            AffixLattice::Pattern { prefix, suffix } => Some(format!("affix:{prefix}*{suffix}")),
        }
    }

    pub fn affix_from_text(s: &str) -> Result<AffixLattice, String> {
        if s == "*" {
            return Ok(AffixLattice::Top);
        }
        if let Some(v) = s.strip_prefix("exact:") {
            return Ok(AffixLattice::Exact(v.to_string()));
        }
        let body = s
            .strip_prefix("affix:")
            .ok_or_else(|| format!("expected `*`, `exact:...` or `affix:...`, got `{s}`"))?;
        let (prefix, suffix) = body
            .split_once('*')
            .ok_or_else(|| format!("affix pattern `{body}` lacks `*`"))?;
        if prefix.is_empty() && suffix.is_empty() {
            return Ok(AffixLattice::Top);
        }
        Ok(AffixLattice::Pattern {
            prefix: prefix.to_string(),
            suffix: suffix.to_string(),
        })
    }

    pub fn labels_to_text(l: &LabelSetLattice) -> Option<String> {
        match l {
            LabelSetLattice::Bot => None,
            LabelSetLattice::Set(s) if s.is_empty() => Some("*".into()),
            LabelSetLattice::Set(s) => {
                let items: Vec<&str> = s.iter().map(String::as_str).collect();
                Some(format!("subset:[{}]", items.join(",")))
            }
        }
    }

    pub fn labels_from_text(s: &str) -> Result<LabelSetLattice, String> {
        if s == "*" {
            return Ok(LabelSetLattice::Set(BTreeSet::new()));
        }
        let body = s
            .strip_prefix("subset:[")
            .and_then(|b| b.strip_suffix(']'))
            .ok_or_else(|| format!("expected `*` or `subset:[...]`, got `{s}`"))?;
        Ok(LabelSetLattice::Set(
            body.split(',')
                .map(str::trim)
                .filter(|x| !x.is_empty())
                .map(String::from)
                .collect(),
        ))
    }
}

impl std::str::FromStr for NodeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "data" => Ok(NodeKind::Data),
            "action" => Ok(NodeKind::Action),
            other => Err(format!("unknown node kind `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exact(s: &str) -> AffixLattice {
        AffixLattice::Exact(s.into())
    }

    fn set(xs: &[&str]) -> LabelSetLattice {
        LabelSetLattice::Set(xs.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn input_stream_types_generalize_to_suffix() {
        let j = exact("BufferedInputStream").join(&exact("FileInputStream"));
        assert_eq!(
            j,
            AffixLattice::Pattern {
                prefix: String::new(),
                suffix: "InputStream".into()
            }
        );
        assert!(!j.admits(Some("String")));
        assert!(j.admits(Some("InputStream")));
    }

    #[test]
    fn unrelated_strings_join_to_top() {
        assert_eq!(exact("Cursor").join(&exact("int")), AffixLattice::Top);
        assert_eq!(exact("Cursor").join(&exact("Cursor")), exact("Cursor"));
    }

    #[test]
    fn overlapping_prefix_and_suffix_still_admit_inputs() {
        let j = exact("aba").join(&exact("abba"));
        assert!(j.admits(Some("aba")));
        assert!(j.admits(Some("abba")));
    }

    #[test]
    fn num_para_and_control_sets() {
        let a = ConstLattice::Exactly(1u32);
        assert_eq!(a.join(&ConstLattice::Exactly(2)), ConstLattice::Top);
        assert_eq!(set(&["IF", "CATCH"]).join(&set(&["IF"])), set(&["IF"]));
        assert_eq!(LabelSetLattice::Bot.join(&set(&["IF"])), set(&["IF"]));
    }

    #[test]
    fn satisfaction_examples() {
        let cursor = Node::data("c").with_type("Cursor");
        let facts = NodeFacts::default();
        assert!(NodePredicates::top().satisfied_by(&cursor, &facts));
        let p = NodePredicates {
            data_type: exact("Cursor"),
            ..Default::default()
        };
        assert!(p.satisfied_by(&cursor, &facts));
        let s = Node::data("s").with_type("String");
        let q = NodePredicates {
            data_type: AffixLattice::Pattern {
                prefix: String::new(),
                suffix: "InputStream".into(),
            },
            ..Default::default()
        };
        assert!(!q.satisfied_by(&s, &facts));
    }

    #[test]
    fn control_set_is_a_lower_bound() {
        let n = Node::action("a", "close");
        let facts = NodeFacts {
            output_ignored: Some(true),
            trans_control_dep: ["IF".to_string(), "CATCH".to_string()].into(),
        };
        let p = NodePredicates {
            trans_control_dep: set(&["IF"]),
            ..Default::default()
        };
        assert!(p.satisfied_by(&n, &facts));
        let p = NodePredicates {
            trans_control_dep: set(&["LOOP"]),
            ..Default::default()
        };
        assert!(!p.satisfied_by(&n, &facts));
    }

    #[test]
    fn field_encodings_round_trip() {
        use encoding::*;
        for a in [
            AffixLattice::Top,
            exact("Cursor"),
            AffixLattice::Pattern {
                prefix: "Buf".into(),
                suffix: "Stream".into(),
            },
        ] {
            assert_eq!(affix_from_text(&affix_to_text(&a).unwrap()).unwrap(), a);
        }
        assert_eq!(affix_to_text(&AffixLattice::Bot), None);
        let l = set(&["IF", "CATCH"]);
        assert_eq!(labels_to_text(&l).unwrap(), "subset:[CATCH,IF]");
        assert_eq!(labels_from_text("subset:[CATCH,IF]").unwrap(), l);
        let c: ConstLattice<u32> = const_from_text("exact:3").unwrap();
        assert_eq!(c, ConstLattice::Exactly(3));
        let b: ConstLattice<bool> = const_from_text("exact:true").unwrap();
        assert_eq!(const_to_text(&b).unwrap(), "exact:true");
        assert!(const_from_text::<u32>("exact:x").is_err());
    }

    fn short_string() -> impl Strategy<Value = String> {
        "[ab]{0,4}"
    }

    fn arb_affix() -> impl Strategy<Value = AffixLattice> {
        prop_oneof![
            Just(AffixLattice::Bot),
            Just(AffixLattice::Top),
            short_string().prop_map(AffixLattice::Exact),
            (short_string(), short_string())
                .prop_filter("nonempty", |(p, s)| !p.is_empty() || !s.is_empty())
                .prop_map(|(prefix, suffix)| AffixLattice::Pattern { prefix, suffix }),
        ]
    }

    fn arb_const<V: Clone + std::fmt::Debug + 'static>(
        vals: impl Strategy<Value = V> + 'static,
    ) -> impl Strategy<Value = ConstLattice<V>> {
        prop_oneof![
            Just(ConstLattice::Bot),
            Just(ConstLattice::Top),
            vals.prop_map(ConstLattice::Exactly),
        ]
    }

    fn arb_labels() -> impl Strategy<Value = LabelSetLattice> {
        prop_oneof![
            Just(LabelSetLattice::Bot),
            proptest::collection::btree_set(prop_oneof![Just("IF"), Just("LOOP"), Just("CATCH")], 0..3)
                .prop_map(|s| LabelSetLattice::Set(s.into_iter().map(String::from).collect())),
        ]
    }

    prop_compose! {
        fn arb_preds()(
            kind in arb_const(prop_oneof![Just(NodeKind::Data), Just(NodeKind::Action)]),
            label in arb_const("[fg]"),
            data_type in arb_affix(),
            data_value in arb_const("[01]"),
            num_para in arb_const(0u32..3),
            declaring_type in arb_affix(),
            trans_control_dep in arb_labels(),
            output_ignored in arb_const(any::<bool>()),
        ) -> NodePredicates {
            NodePredicates { kind, label, data_type, data_value, num_para, declaring_type, trans_control_dep, output_ignored }
        }
    }

    prop_compose! {
        fn arb_node()(
            action in any::<bool>(),
            label in "[fg]",
            ty in proptest::option::of(short_string()),
            value in proptest::option::of("[01]"),
            np in 0u32..3,
            dt in proptest::option::of(short_string()),
            ignored in any::<bool>(),
            tcd in proptest::collection::btree_set(prop_oneof![Just("IF"), Just("LOOP"), Just("CATCH")], 0..3),
        ) -> (Node, NodeFacts) {
            let mut n = if action { Node::action("n", label).with_num_para(np) } else { Node::data("n") };
            n.data_type = ty;
            n.data_value = value;
            if action { n.declaring_type = dt; }
            let facts = NodeFacts {
                output_ignored: action.then_some(ignored),
                trans_control_dep: tcd.into_iter().map(String::from).collect(),
            };
            (n, facts)
        }
    }

    fn without_bot(mut a: NodePredicates) -> NodePredicates {
        let top = NodePredicates::top();
        if a.kind == ConstLattice::Bot { a.kind = top.kind; }
        if a.label == ConstLattice::Bot { a.label = top.label; }
        if a.data_type == AffixLattice::Bot { a.data_type = top.data_type; }
        if a.data_value == ConstLattice::Bot { a.data_value = top.data_value; }
        if a.num_para == ConstLattice::Bot { a.num_para = top.num_para; }
        if a.declaring_type == AffixLattice::Bot { a.declaring_type = top.declaring_type; }
        if a.trans_control_dep == LabelSetLattice::Bot { a.trans_control_dep = top.trans_control_dep; }
        if a.output_ignored == ConstLattice::Bot { a.output_ignored = top.output_ignored; }
        a
    }

    proptest! {
        #[test]
        fn join_is_commutative(a in arb_preds(), b in arb_preds()) {
            prop_assert_eq!(a.join(&b), b.join(&a));
        }

        #[test]
        fn join_is_associative(a in arb_preds(), b in arb_preds(), c in arb_preds()) {
            prop_assert_eq!(a.join(&b).join(&c), a.join(&b.join(&c)));
        }

        #[test]
        fn join_is_idempotent(a in arb_preds()) {
            prop_assert_eq!(a.join(&a), a);
        }

        #[test]
        fn from_node_is_a_satisfied_unit((n, f) in arb_node()) {
            let p = NodePredicates::from_node(&n, &f);
            prop_assert_eq!(p.join(&p), p.clone());
            prop_assert!(p.satisfied_by(&n, &f));
        }

        #[test]
        fn satisfaction_survives_joins((n, f) in arb_node(), b in arb_preds()) {
            let own = NodePredicates::from_node(&n, &f);
            prop_assert!(own.join(&b).satisfied_by(&n, &f));
        }

        #[test]
        fn satisfaction_is_monotone_for_bot_free_bundles((n, f) in arb_node(), a in arb_preds(), b in arb_preds()) {
            let a = without_bot(a);
            if a.satisfied_by(&n, &f) {
                prop_assert!(a.join(&b).satisfied_by(&n, &f));
            }
        }

        #[test]
        fn affix_join_admits_both_inputs(a in short_string(), b in short_string()) {
            let j = AffixLattice::Exact(a.clone()).join(&AffixLattice::Exact(b.clone()));
            prop_assert!(j.admits(Some(&a)));
            prop_assert!(j.admits(Some(&b)));
        }
    }
}
