//! Ground-truth brute force: game-tree satisfiability, constructive solution
//! extraction, and exhaustive adjoint-ordering search.
//!
//! Everything here ignores tractability structure on purpose. The definition
//! checks used by the exhaustive search are re-implemented locally as literal
//! quadruple loops so that this module shares nothing with the polynomial
//! pipeline beyond the instance model.

use std::collections::BTreeSet;

use itertools::Itertools;

use crate::model::{Instance, Quantifier, ValueId, VarId, VariableOrder};
use crate::strategy::{StrategyNode, StrategyTree};

/// Exploration limits. Exceeding any cap aborts with a distinct exhaustion
/// result, never a verdict.
#[derive(Clone, Copy, Debug)]
pub struct OracleBudget {
    pub max_nodes: u64,
    pub max_perms: u64,
    pub time_cap: Option<std::time::Duration>,
}

impl Default for OracleBudget {
    fn default() -> Self {
        OracleBudget {
            max_nodes: 20_000_000,
            max_perms: 2_000_000,
            time_cap: None,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Exhausted {
    Nodes,
    Perms,
    Time,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum OracleVerdict {
    True,
    False,
    Exhausted(Exhausted),
}

struct GameSearch<'a> {
    inst: &'a Instance,
    by_rank: Vec<VarId>,
    budget: OracleBudget,
    nodes: u64,
    started: std::time::Instant,
}

impl<'a> GameSearch<'a> {
    fn new(inst: &'a Instance, budget: OracleBudget) -> Self {
        GameSearch {
            inst,
            by_rank: inst.prefix().by_rank().collect(),
            budget,
            nodes: 0,
            started: std::time::Instant::now(),
        }
    }

    fn tick(&mut self) -> Option<Exhausted> {
        self.nodes += 1;
        if self.nodes > self.budget.max_nodes {
            return Some(Exhausted::Nodes);
        }
        if let Some(cap) = self.budget.time_cap {
            if self.nodes % 4096 == 0 && self.started.elapsed() > cap {
                return Some(Exhausted::Time);
            }
        }
        None
    }

    fn consistent_with(&self, assigned: &[(VarId, usize)], var: VarId, val: usize) -> bool {
        assigned
            .iter()
            .all(|&(u, uv)| self.inst.rel_view(u, var).allows(uv, val))
    }

    /// Plain evaluation in prefix order: some value works at existential
    /// nodes, every value works at universal nodes.
    fn eval(&mut self, level: usize, assigned: &mut Vec<(VarId, usize)>) -> Result<bool, Exhausted> {
        if let Some(e) = self.tick() {
            return Err(e);
        }
        if level > self.by_rank.len() {
            return Ok(true);
        }
        let var = self.by_rank[level - 1];
        let d = self.inst.domain_size(var);
        match self.inst.quantifier(var) {
            Quantifier::Exists => {
                for val in 0..d {
                    if !self.consistent_with(assigned, var, val) {
                        continue;
                    }
                    assigned.push((var, val));
                    let sub = self.eval(level + 1, assigned)?;
                    assigned.pop();
                    if sub {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Quantifier::Forall => {
                for val in 0..d {
                    if !self.consistent_with(assigned, var, val) {
                        return Ok(false);
                    }
                    assigned.push((var, val));
                    let sub = self.eval(level + 1, assigned)?;
                    assigned.pop();
                    if !sub {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
        }
    }

    /// Constructive variant: returns the subtree witnessing truth, choosing
    /// the smallest working value at existential nodes.
    fn extract(
        &mut self,
        level: usize,
        assigned: &mut Vec<(VarId, usize)>,
    ) -> Result<Option<Vec<StrategyNode>>, Exhausted> {
        if let Some(e) = self.tick() {
            return Err(e);
        }
        if level > self.by_rank.len() {
            return Ok(Some(Vec::new()));
        }
        let var = self.by_rank[level - 1];
        let d = self.inst.domain_size(var);
        match self.inst.quantifier(var) {
            Quantifier::Exists => {
                for val in 0..d {
                    if !self.consistent_with(assigned, var, val) {
                        continue;
                    }
                    assigned.push((var, val));
                    let sub = self.extract(level + 1, assigned)?;
                    assigned.pop();
                    if let Some(children) = sub {
                        return Ok(Some(vec![StrategyNode {
                            value: ValueId(val),
                            children,
                        }]));
                    }
                }
                Ok(None)
            }
            Quantifier::Forall => {
                let mut nodes = Vec::with_capacity(d);
                for val in 0..d {
                    if !self.consistent_with(assigned, var, val) {
                        return Ok(None);
                    }
                    assigned.push((var, val));
                    let sub = self.extract(level + 1, assigned)?;
                    assigned.pop();
                    match sub {
                        Some(children) => nodes.push(StrategyNode {
                            value: ValueId(val),
                            children,
                        }),
                        None => return Ok(None),
                    }
                }
                Ok(Some(nodes))
            }
        }
    }
}

/// Decides satisfiability by direct recursive evaluation of the quantified
/// formula in prefix order.
pub fn brute_force_satisfiable(inst: &Instance, budget: OracleBudget) -> OracleVerdict {
    let mut search = GameSearch::new(inst, budget);
    let mut assigned = Vec::new();
    match search.eval(1, &mut assigned) {
        Ok(true) => OracleVerdict::True,
        Ok(false) => OracleVerdict::False,
        Err(e) => OracleVerdict::Exhausted(e),
    }
}

#[derive(Clone, Debug)]
pub enum SolutionOutcome {
    Tree(StrategyTree),
    Unsat,
    Exhausted(Exhausted),
}

/// Constructive satisfiability: a verified strategy tree with smallest-value
/// existential witnesses, or `Unsat`.
pub fn brute_force_solution(inst: &Instance, budget: OracleBudget) -> SolutionOutcome {
    let mut search = GameSearch::new(inst, budget);
    let mut assigned = Vec::new();
    match search.extract(1, &mut assigned) {
        Ok(Some(roots)) => SolutionOutcome::Tree(StrategyTree {
            order: inst.prefix().clone(),
            roots,
        }),
        Ok(None) => SolutionOutcome::Unsat,
        Err(e) => SolutionOutcome::Exhausted(e),
    }
}

/// Local, literal re-implementations of the per-triple definition checks
/// (quadruple loops over value pairs), kept deliberately separate from the
/// pattern module.
mod defs {
    use super::*;

    pub fn qbtp_ok(inst: &Instance, i: VarId, j: VarId, k: VarId) -> bool {
        let rij = inst.rel_view(i, j);
        let rik = inst.rel_view(i, k);
        let rjk = inst.rel_view(j, k);
        let dk = inst.domain_size(k);
        for a in 0..inst.domain_size(i) {
            for b in 0..inst.domain_size(j) {
                if !rij.allows(a, b) {
                    continue;
                }
                for g in 0..dk {
                    if !rik.allows(a, g) {
                        continue;
                    }
                    for t in 0..dk {
                        if rjk.allows(b, t) && !rik.allows(a, t) && !rjk.allows(b, g) {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    pub fn qbap_ok(inst: &Instance, i: VarId, j: VarId, k: VarId) -> bool {
        let rik = inst.rel_view(i, k);
        let rjk = inst.rel_view(j, k);
        let dk = inst.domain_size(k);
        for a in 0..inst.domain_size(i) {
            for b in 0..inst.domain_size(j) {
                for g in 0..dk {
                    if !rik.allows(a, g) {
                        continue;
                    }
                    for t in 0..dk {
                        if rjk.allows(b, t) && !rik.allows(a, t) && !rjk.allows(b, g) {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    pub fn min_of_max_ok(inst: &Instance, i: VarId, j: VarId, k: VarId, require_related: bool) -> bool {
        let rij = inst.rel_view(i, j);
        let rik = inst.rel_view(i, k);
        let rjk = inst.rel_view(j, k);
        for a in 0..inst.domain_size(i) {
            for b in 0..inst.domain_size(j) {
                if require_related && i != j && !rij.allows(a, b) {
                    continue;
                }
                let ma = (0..inst.domain_size(k)).rev().find(|&g| rik.allows(a, g));
                let mb = (0..inst.domain_size(k)).rev().find(|&g| rjk.allows(b, g));
                match (ma, mb) {
                    (Some(ma), Some(mb)) => {
                        let g = ma.min(mb);
                        if !(rik.allows(a, g) && rjk.allows(b, g)) {
                            return false;
                        }
                    }
                    _ => return false,
                }
            }
        }
        true
    }

    /// Universal pairwise order preserved, and every existential keeps (at
    /// least / exactly, per `exact`) its preceding universals.
    pub fn compatible(
        inst: &Instance,
        pi: &VariableOrder,
        delta: &VariableOrder,
        exact: bool,
    ) -> bool {
        for a in inst.var_ids() {
            for b in inst.var_ids() {
                if a == b {
                    continue;
                }
                if inst.is_universal(a) && inst.is_universal(b) {
                    if pi.rank(a) < pi.rank(b) && delta.rank(a) >= delta.rank(b) {
                        return false;
                    }
                } else if inst.is_universal(a) && inst.is_existential(b) {
                    if pi.rank(a) < pi.rank(b) && delta.rank(a) >= delta.rank(b) {
                        return false;
                    }
                    if exact && delta.rank(a) < delta.rank(b) && pi.rank(a) >= pi.rank(b) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SearchTarget {
    Qbtp,
    BlockQbtp,
    Qmme,
}

#[derive(Clone, Debug)]
pub enum SearchOutcome {
    Found(VariableOrder),
    None,
    Exhausted(Exhausted),
}

fn valid_ordering(inst: &Instance, delta: &VariableOrder, target: SearchTarget) -> bool {
    let pi = inst.prefix();
    let exact = target == SearchTarget::BlockQbtp;
    if !defs::compatible(inst, pi, delta, exact) {
        return false;
    }
    // Target pattern over every delta-ordered triple.
    let n = inst.n();
    for ri in 1..=n {
        for rj in ri + 1..=n {
            for rk in rj + 1..=n {
                let (i, j, k) = (delta.var_at(ri), delta.var_at(rj), delta.var_at(rk));
                let ok = match target {
                    SearchTarget::Qmme => defs::min_of_max_ok(inst, i, j, k, true),
                    _ => defs::qbtp_ok(inst, i, j, k),
                };
                if !ok {
                    return false;
                }
            }
        }
    }
    if target == SearchTarget::BlockQbtp {
        return true;
    }
    // Angle property for later-existential pairs jumped over by each
    // existential.
    for k in inst.var_ids().filter(|&k| inst.is_existential(k)) {
        let jumped: Vec<VarId> = inst
            .var_ids()
            .filter(|&v| {
                v != k
                    && inst.is_existential(v)
                    && pi.rank(v) > pi.rank(k)
                    && delta.rank(v) < delta.rank(k)
            })
            .collect();
        // Restrict to variables outside k's block under pi.
        let jumped: Vec<VarId> = jumped
            .into_iter()
            .filter(|&v| {
                let (lo, hi) = (pi.rank(k).min(pi.rank(v)), pi.rank(k).max(pi.rank(v)));
                (lo..hi).any(|r| inst.quantifier(pi.var_at(r)) != inst.quantifier(k))
            })
            .collect();
        for &i in &jumped {
            for &j in &jumped {
                if delta.rank(i) > delta.rank(j) {
                    continue;
                }
                let ok = match target {
                    SearchTarget::Qmme => defs::min_of_max_ok(inst, i, j, k, false),
                    _ => defs::qbap_ok(inst, i, j, k),
                };
                if !ok {
                    return false;
                }
            }
        }
    }
    true
}

/// Enumerates orderings compatible with the prefix in lexicographic rank
/// order and returns the first one passing the target's full condition set.
pub fn exhaustive_adjoint_search(
    inst: &Instance,
    target: SearchTarget,
    budget: OracleBudget,
) -> SearchOutcome {
    let n = inst.n();
    let mut perms: u64 = 0;
    let started = std::time::Instant::now();
    for seq in (0..n).permutations(n) {
        perms += 1;
        if perms > budget.max_perms {
            return SearchOutcome::Exhausted(Exhausted::Perms);
        }
        if let Some(cap) = budget.time_cap {
            if perms % 256 == 0 && started.elapsed() > cap {
                return SearchOutcome::Exhausted(Exhausted::Time);
            }
        }
        let delta = VariableOrder::from_sequence(seq.into_iter().map(VarId).collect())
            .expect("permutation is a bijection");
        if valid_ordering(inst, &delta, target) {
            return SearchOutcome::Found(delta);
        }
    }
    SearchOutcome::None
}

/// The condition set used by the exhaustive search, exposed for
/// cross-checking specific candidate orderings.
pub fn oracle_accepts(inst: &Instance, delta: &VariableOrder, target: SearchTarget) -> bool {
    valid_ordering(inst, delta, target)
}

/// Convenience set view used by tests comparing search universes.
pub fn semi_compatible_orderings(inst: &Instance, cap: usize) -> BTreeSet<Vec<usize>> {
    let n = inst.n();
    (0..n)
        .permutations(n)
        .filter(|seq| {
            let delta = VariableOrder::from_sequence(seq.iter().copied().map(VarId).collect())
                .expect("bijection");
            defs::compatible(inst, inst.prefix(), &delta, false)
        })
        .take(cap)
        .map(|seq| seq.to_vec())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_instance;
    use crate::strategy::verify_strategy;
    use crate::test_fixtures::{example2_delta, example2_instance};

    #[test]
    fn example2_satisfiable_with_verified_tree() {
        let inst = example2_instance();
        assert_eq!(
            brute_force_satisfiable(&inst, OracleBudget::default()),
            OracleVerdict::True
        );
        match brute_force_solution(&inst, OracleBudget::default()) {
            SolutionOutcome::Tree(tree) => {
                assert!(verify_strategy(&inst, &tree).unwrap().is_valid());
                assert_eq!(tree.scenarios().len(), 2);
            }
            other => panic!("expected tree, got {other:?}"),
        }
    }

    #[test]
    fn universal_with_empty_support_row_is_false() {
        let text = "qcsp 2\nvar x1 A 0 1\nvar x2 E 0 1\ncon x1 x2 : 0,0 0,1\n";
        let inst = parse_instance(text).unwrap();
        assert_eq!(
            brute_force_satisfiable(&inst, OracleBudget::default()),
            OracleVerdict::False
        );
        assert!(matches!(
            brute_force_solution(&inst, OracleBudget::default()),
            SolutionOutcome::Unsat
        ));
    }

    #[test]
    fn unconstrained_nonempty_domains_are_true() {
        let inst = parse_instance("qcsp 2\nvar x1 A 0 1\nvar x2 E 0\n").unwrap();
        assert_eq!(
            brute_force_satisfiable(&inst, OracleBudget::default()),
            OracleVerdict::True
        );
    }

    #[test]
    fn single_existential_solution() {
        let inst = parse_instance("qcsp 1\nvar x E a b\n").unwrap();
        match brute_force_solution(&inst, OracleBudget::default()) {
            SolutionOutcome::Tree(tree) => {
                assert_eq!(tree.roots.len(), 1);
                assert_eq!(tree.roots[0].value, ValueId(0));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn budget_exhaustion_is_distinct() {
        let inst = example2_instance();
        let tiny = OracleBudget {
            max_nodes: 2,
            ..OracleBudget::default()
        };
        assert!(matches!(
            brute_force_satisfiable(&inst, tiny),
            OracleVerdict::Exhausted(Exhausted::Nodes)
        ));
        let tiny = OracleBudget {
            max_perms: 1,
            ..OracleBudget::default()
        };
        // Example 2's identity ordering fails, so the cap hits.
        assert!(matches!(
            exhaustive_adjoint_search(&inst, SearchTarget::Qbtp, tiny),
            SearchOutcome::Exhausted(Exhausted::Perms)
        ));
    }

    #[test]
    fn exhaustive_search_example2() {
        let inst = example2_instance();
        match exhaustive_adjoint_search(&inst, SearchTarget::Qbtp, OracleBudget::default()) {
            SearchOutcome::Found(delta) => {
                assert!(oracle_accepts(&inst, &delta, SearchTarget::Qbtp));
            }
            other => panic!("expected a found ordering, got {other:?}"),
        }
        // The known ordering is in the valid set.
        assert!(oracle_accepts(&inst, &example2_delta(), SearchTarget::Qbtp));
    }

    #[test]
    fn qbtp_under_prefix_found_immediately() {
        let inst = parse_instance("qcsp 3\nvar x1 A 0 1\nvar x2 E 0 1\nvar x3 E 0 1\n").unwrap();
        match exhaustive_adjoint_search(&inst, SearchTarget::Qbtp, OracleBudget::default()) {
            SearchOutcome::Found(delta) => assert!(delta.is_identity()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_universal_broken_triangle_has_no_ordering() {
        let text = "qcsp 3\nvar x1 A 0 1\nvar x2 A 0 1\nvar x3 A 0 1\n\
                    con x1 x3 : 0,0\ncon x2 x3 : 1,1\n";
        let inst = parse_instance(text).unwrap();
        assert!(matches!(
            exhaustive_adjoint_search(&inst, SearchTarget::Qbtp, OracleBudget::default()),
            SearchOutcome::None
        ));
    }

    #[test]
    fn solution_none_iff_unsatisfiable() {
        for seed in 0..60u64 {
            let inst = crate::model::generate_instance(&crate::model::GenParams::new(
                4, 2, "AEEA", 0.7, 0.55, seed,
            ))
            .unwrap();
            let sat = brute_force_satisfiable(&inst, OracleBudget::default());
            let sol = brute_force_solution(&inst, OracleBudget::default());
            match (sat, sol) {
                (OracleVerdict::True, SolutionOutcome::Tree(t)) => {
                    assert!(verify_strategy(&inst, &t).unwrap().is_valid());
                }
                (OracleVerdict::False, SolutionOutcome::Unsat) => {}
                (s, t) => panic!("oracle disagreement: {s:?} vs {t:?}"),
            }
        }
    }
}
