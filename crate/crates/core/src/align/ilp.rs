//! 0-1 integer programs and an exact branch-and-bound solver for them.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(usize, i64)>,
    pub sense: Sense,
    pub rhs: i64,
}

/// A maximization problem over binary variables with integral coefficients.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IlpInstance {
    pub vars: Vec<String>,
    pub objective: Vec<(usize, i64)>,
    pub constraints: Vec<Constraint>,
}

impl IlpInstance {
    pub fn add_var(&mut self, name: impl Into<String>) -> usize {
        self.vars.push(name.into());
        self.vars.len() - 1
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, terms: Vec<(usize, i64)>, sense: Sense, rhs: i64) {
        self.constraints.push(Constraint {
            name: name.into(),
            terms,
            sense,
            rhs,
        });
    }

    pub fn objective_value(&self, values: &[bool]) -> i64 {
        self.objective
            .iter()
            .filter(|(v, _)| values[*v])
            .map(|(_, c)| c)
            .sum()
    }

    pub fn is_feasible(&self, values: &[bool]) -> bool {
        self.constraints.iter().all(|c| {
            let lhs: i64 = c.terms.iter().filter(|(v, _)| values[*v]).map(|(_, k)| k).sum();
            match c.sense {
                Sense::Le => lhs <= c.rhs,
                Sense::Eq => lhs == c.rhs,
                Sense::Ge => lhs >= c.rhs,
            }
        })
    }

    /// CPLEX-style LP text, one constraint per line.
    pub fn to_lp(&self) -> String {
        fn terms(out: &mut String, vars: &[String], ts: &[(usize, i64)]) {
            if ts.is_empty() {
                out.push_str(" 0");
            }
            for (v, c) in ts {
                let sign = if *c < 0 { '-' } else { '+' };
                match c.abs() {
                    1 => write!(out, " {sign} {}", vars[*v]).unwrap(),
                    k => write!(out, " {sign} {k} {}", vars[*v]).unwrap(),
                }
            }
        }
        let mut out = String::from("Maximize\n obj:");
        terms(&mut out, &self.vars, &self.objective);
        out.push_str("\nSubject To\n");
        for c in &self.constraints {
            write!(out, " {}:", c.name).unwrap();
            terms(&mut out, &self.vars, &c.terms);
            let op = match c.sense {
                Sense::Le => "<=",
                Sense::Eq => "=",
                Sense::Ge => ">=",
            };
            writeln!(out, " {op} {}", c.rhs).unwrap();
        }
        out.push_str("Binary\n");
        for v in &self.vars {
            writeln!(out, " {v}").unwrap();
        }
        out.push_str("End\n");
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Solution {
    pub values: Vec<bool>,
    pub objective: i64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SolveError {
    #[error("instance has {vars} variables, above the cap of {cap}")]
    TooLarge { vars: usize, cap: usize },
    #[error("search budget of {0} nodes exhausted before proving optimality")]
    BudgetExhausted(u64),
    #[error("instance is infeasible")]
    Infeasible,
}

/// Anything that can solve 0-1 programs exactly.
pub trait IlpSolver {
    fn solve(&self, instance: &IlpInstance) -> Result<Solution, SolveError>;
}

/// Depth-first branch and bound with constraint propagation.
///
/// Variables are branched in instance order, trying 1 before 0; only strictly
/// better incumbents replace the current one, so the result is deterministic.
/// The bound adds to the current objective the best credit still assignable,
/// counting at most one variable per at-most-one row.
#[derive(Debug, Clone)]
pub struct BranchAndBound {
    pub max_vars: usize,
    pub max_search_nodes: u64,
}

impl Default for BranchAndBound {
    fn default() -> Self {
        BranchAndBound {
            max_vars: 200_000,
            max_search_nodes: 20_000_000,
        }
    }
}

struct State<'a> {
    inst: &'a IlpInstance,
    rows_of: Vec<Vec<(usize, i64)>>,
    value: Vec<i8>,
    fixed: Vec<i64>,
    pos_free: Vec<i64>,
    neg_free: Vec<i64>,
    trail: Vec<usize>,
    obj_coef: Vec<i64>,
    current: i64,
    cover: [Vec<Option<usize>>; 2],
    scratch: Vec<i64>,
}

impl<'a> State<'a> {
    fn new(inst: &'a IlpInstance) -> Self {
        let n = inst.vars.len();
        let m = inst.constraints.len();
        let mut rows_of = vec![Vec::new(); n];
        let mut pos_free = vec![0; m];
        let mut neg_free = vec![0; m];
        for (r, c) in inst.constraints.iter().enumerate() {
            for &(v, k) in &c.terms {
                rows_of[v].push((r, k));
                if k > 0 {
                    pos_free[r] += k;
                } else {
                    neg_free[r] += k;
                }
            }
        }
        let mut obj_coef = vec![0; n];
        for &(v, k) in &inst.objective {
            obj_coef[v] += k;
        }
        let amo: Vec<bool> = inst
            .constraints
            .iter()
            .map(|c| c.sense != Sense::Ge && c.rhs == 1 && c.terms.iter().all(|&(_, k)| k == 1))
            .collect();
        let mut cover = [vec![None; n], vec![None; n]];
        for v in 0..n {
            let rows: Vec<usize> = rows_of[v].iter().map(|&(r, _)| r).filter(|&r| amo[r]).collect();
            cover[0][v] = rows.first().copied();
            cover[1][v] = rows.last().copied();
        }
        State {
            inst,
            rows_of,
            value: vec![-1; n],
            fixed: vec![0; m],
            pos_free,
            neg_free,
            trail: Vec::new(),
            obj_coef,
            current: 0,
            cover,
            scratch: vec![0; m],
        }
    }

    fn assign(&mut self, v: usize, val: bool, queue: &mut Vec<usize>) {
        self.value[v] = val as i8;
        self.trail.push(v);
        if val {
            self.current += self.obj_coef[v];
        }
        for &(r, k) in &self.rows_of[v] {
            if k > 0 {
                self.pos_free[r] -= k;
            } else {
                self.neg_free[r] -= k;
            }
            if val {
                self.fixed[r] += k;
            }
            queue.push(r);
        }
    }

    fn undo_to(&mut self, mark: usize) {
        while self.trail.len() > mark {
            let v = self.trail.pop().expect("trail longer than mark");
            let val = self.value[v] == 1;
            if val {
                self.current -= self.obj_coef[v];
            }
            for &(r, k) in &self.rows_of[v] {
                if k > 0 {
                    self.pos_free[r] += k;
                } else {
                    self.neg_free[r] += k;
                }
                if val {
                    self.fixed[r] -= k;
                }
            }
            self.value[v] = -1;
        }
    }

    /// Returns false on conflict.
    fn propagate(&mut self, mut queue: Vec<usize>) -> bool {
        while let Some(r) = queue.pop() {
            let c = &self.inst.constraints[r];
            let lo = self.fixed[r] + self.neg_free[r];
            let hi = self.fixed[r] + self.pos_free[r];
            let upper = c.sense != Sense::Ge;
            let lower = c.sense != Sense::Le;
            if (upper && lo > c.rhs) || (lower && hi < c.rhs) {
                return false;
            }
            let mut forced = Vec::new();
            for &(v, k) in &c.terms {
                if self.value[v] != -1 {
                    continue;
                }
                if upper {
                    if k > 0 && lo + k > c.rhs {
                        forced.push((v, false));
                        continue;
                    }
                    if k < 0 && lo - k > c.rhs {
                        forced.push((v, true));
                        continue;
                    }
                }
                if lower {
                    if k > 0 && hi - k < c.rhs {
                        forced.push((v, true));
                    } else if k < 0 && hi + k < c.rhs {
                        forced.push((v, false));
                    }
                }
            }
            for (v, val) in forced {
                match self.value[v] {
                    -1 => self.assign(v, val, &mut queue),
                    x if (x == 1) != val => return false,
                    _ => {}
                }
            }
        }
        true
    }

    fn bound(&mut self) -> i64 {
        let mut best = i64::MAX;
        for side in 0..2 {
            let mut extra = 0;
            let mut touched = Vec::new();
            for &(v, _) in &self.inst.objective {
                let k = self.obj_coef[v];
                if self.value[v] != -1 || k <= 0 {
                    continue;
                }
                match self.cover[side][v] {
                    None => extra += k,
                    Some(r) => {
                        if self.scratch[r] == 0 {
                            touched.push(r);
                        }
                        self.scratch[r] = self.scratch[r].max(k);
                    }
                }
            }
            for r in touched {
                extra += self.scratch[r];
                self.scratch[r] = 0;
            }
            best = best.min(extra);
        }
        self.current + best
    }
}

impl IlpSolver for BranchAndBound {
    fn solve(&self, inst: &IlpInstance) -> Result<Solution, SolveError> {
        if inst.vars.len() > self.max_vars {
            return Err(SolveError::TooLarge {
                vars: inst.vars.len(),
                cap: self.max_vars,
            });
        }
        let n = inst.vars.len();
        let mut st = State::new(inst);
        let mut incumbent: Option<(i64, Vec<i8>)> = None;
        let all_rows: Vec<usize> = (0..inst.constraints.len()).collect();
        let mut ok = st.propagate(all_rows);
        // Decision stack: (variable, value tried, trail mark before the decision).
        let mut decisions: Vec<(usize, bool, usize)> = Vec::new();
        let mut explored: u64 = 0;
        let mut next_free = 0usize;
        loop {
            explored += 1;
            if explored > self.max_search_nodes {
                return Err(SolveError::BudgetExhausted(self.max_search_nodes));
            }
            let mut backtrack = !ok;
            if !backtrack {
                let bound = st.bound();
                if incumbent.as_ref().is_some_and(|(best, _)| bound <= *best) {
                    backtrack = true;
                }
            }
            if !backtrack {
                while next_free < n && st.value[next_free] != -1 {
                    next_free += 1;
                }
                match (next_free < n).then_some(next_free) {
                    None => {
                        if incumbent.as_ref().map_or(true, |(best, _)| st.current > *best) {
                            incumbent = Some((st.current, st.value.clone()));
                        }
                    }
                    Some(v) => {
                        let mark = st.trail.len();
                        decisions.push((v, true, mark));
                        let mut q = Vec::new();
                        st.assign(v, true, &mut q);
                        ok = st.propagate(q);
                        continue;
                    }
                }
            }
            // Backtrack to the most recent decision that still has a 0 branch.
            loop {
                let Some((v, tried_one, mark)) = decisions.pop() else {
                    return match incumbent {
                        Some((objective, vals)) => Ok(Solution {
                            values: vals.into_iter().map(|x| x == 1).collect(),
                            objective,
                        }),
                        None => Err(SolveError::Infeasible),
                    };
                };
                st.undo_to(mark);
                next_free = next_free.min(v);
                if tried_one {
                    decisions.push((v, false, mark));
                    let mut q = Vec::new();
                    st.assign(v, false, &mut q);
                    ok = st.propagate(q);
                    break;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(inst: &IlpInstance) -> Option<i64> {
        let n = inst.vars.len();
        (0u64..1 << n)
            .filter_map(|mask| {
                let vals: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
                inst.is_feasible(&vals).then(|| inst.objective_value(&vals))
            })
            .max()
    }

    #[test]
    fn knapsack_like_instance() {
        let mut i = IlpInstance::default();
        let a = i.add_var("a");
        let b = i.add_var("b");
        let c = i.add_var("c");
        i.objective = vec![(a, 3), (b, 2), (c, 2)];
        i.add_constraint("cap", vec![(a, 2), (b, 1), (c, 1)], Sense::Le, 2);
        let s = BranchAndBound::default().solve(&i).unwrap();
        assert_eq!(s.objective, 4);
        assert_eq!(s.values, vec![false, true, true]);
        assert_eq!(brute(&i), Some(4));
    }

    #[test]
    fn infeasible_instance_is_reported() {
        let mut i = IlpInstance::default();
        let a = i.add_var("a");
        i.add_constraint("one", vec![(a, 1)], Sense::Eq, 1);
        i.add_constraint("zero", vec![(a, 1)], Sense::Eq, 0);
        assert_eq!(BranchAndBound::default().solve(&i), Err(SolveError::Infeasible));
    }

    #[test]
    fn caps_are_enforced() {
        let mut i = IlpInstance::default();
        for k in 0..4 {
            i.add_var(format!("x{k}"));
        }
        let s = BranchAndBound {
            max_vars: 3,
            ..Default::default()
        };
        assert!(matches!(s.solve(&i), Err(SolveError::TooLarge { .. })));
    }

    #[test]
    fn random_instances_match_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let n = rng.gen_range(1..=8);
            let mut i = IlpInstance::default();
            for k in 0..n {
                i.add_var(format!("x{k}"));
            }
            i.objective = (0..n).map(|v| (v, rng.gen_range(-1..=3))).collect();
            for r in 0..rng.gen_range(0..5) {
                let mut terms = Vec::new();
                for v in 0..n {
                    if rng.gen_bool(0.5) {
                        terms.push((v, rng.gen_range(-2..=2)));
                    }
                }
                let sense = [Sense::Le, Sense::Eq, Sense::Ge][rng.gen_range(0..3)];
                i.add_constraint(format!("c{r}"), terms, sense, rng.gen_range(-1..=2));
            }
            let want = brute(&i);
            match BranchAndBound::default().solve(&i) {
                Ok(s) => {
                    assert!(i.is_feasible(&s.values));
                    assert_eq!(Some(s.objective), want);
                    assert_eq!(i.objective_value(&s.values), s.objective);
                }
                Err(SolveError::Infeasible) => assert_eq!(want, None),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn lp_text_lists_every_part() {
        let mut i = IlpInstance::default();
        let a = i.add_var("z_a");
        let b = i.add_var("z_b");
        i.objective = vec![(a, 1), (b, 1)];
        i.add_constraint("c1", vec![(a, 1), (b, -1)], Sense::Le, 0);
        let lp = i.to_lp();
        assert!(lp.contains("obj: + z_a + z_b"));
        assert!(lp.contains("c1: + z_a - z_b <= 0"));
        assert!(lp.trim_end().ends_with("End"));
    }
}
