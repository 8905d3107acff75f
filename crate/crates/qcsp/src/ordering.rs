//! Ordering compatibility relations, dif sets, and the max-closed constraint
//! search that finds an adjoint ordering (or proves none exists).
//!
//! The search builds one constraint system per target class: strict binary
//! precedences for compatibility, plus `w < max(u, v)` guards for every
//! triple on which the target pattern (or angle property) fails with `w`
//! last. All of these are max-closed, so generalized arc consistency followed
//! by taking domain maxima decides the system exactly.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::bitset::BitSet;
use crate::model::{variable_sets, Instance, VarId, VariableOrder};
use crate::patterns::{
    extended_qmme_triple, min_of_max_triple, qbap_holds_triple, qbap_triple, qbtp_holds,
    qbtp_triple, qmme_holds, TripleVerdict,
};

#[derive(Debug, Error)]
pub enum OrderingError {
    /// The solved ordering failed its independent verification. The
    /// construction guarantees this cannot happen, so it indicates a defect
    /// rather than an unsatisfiable search.
    #[error("adjoint verification failed for target {target:?}: {record:?}")]
    VerificationFailed {
        target: AdjointTarget,
        record: Box<VerificationRecord>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AdjointTarget {
    QbtpAdjoint,
    BlockQbtp,
    QmmeAdjoint,
}

impl AdjointTarget {
    pub fn as_str(&self) -> &'static str {
        match self {
            AdjointTarget::QbtpAdjoint => "qbtp-adjoint",
            AdjointTarget::BlockQbtp => "block-qbtp",
            AdjointTarget::QmmeAdjoint => "qmme-adjoint",
        }
    }
}

/// True iff every existential keeps exactly its preceding universals and
/// universal pairwise order is preserved.
pub fn is_block_compatible(inst: &Instance, pi: &VariableOrder, delta: &VariableOrder) -> bool {
    universal_order_preserved(inst, pi, delta)
        && inst.var_ids().filter(|&v| inst.is_existential(v)).all(|v| {
            variable_sets(inst, pi, v).pre_forall == variable_sets(inst, delta, v).pre_forall
        })
}

/// True iff every existential keeps at least its preceding universals and
/// universal pairwise order is preserved.
pub fn is_semi_compatible(inst: &Instance, pi: &VariableOrder, delta: &VariableOrder) -> bool {
    universal_order_preserved(inst, pi, delta)
        && inst.var_ids().filter(|&v| inst.is_existential(v)).all(|v| {
            variable_sets(inst, pi, v)
                .pre_forall
                .is_subset(&variable_sets(inst, delta, v).pre_forall)
        })
}

fn universal_order_preserved(
    inst: &Instance,
    pi: &VariableOrder,
    delta: &VariableOrder,
) -> bool {
    let universals: Vec<VarId> = inst.var_ids().filter(|&v| inst.is_universal(v)).collect();
    universals.iter().all(|&a| {
        universals
            .iter()
            .all(|&b| pi.rank(a) >= pi.rank(b) || delta.rank(a) < delta.rank(b))
    })
}

/// Variables after `x_k` under `pi` but not after it under `delta`: the
/// variables jumped over when `x_k` shifts later.
pub fn dif_set(
    inst: &Instance,
    pi: &VariableOrder,
    delta: &VariableOrder,
    x_k: VarId,
) -> BTreeSet<VarId> {
    let suc_pi = variable_sets(inst, pi, x_k).suc;
    let suc_delta = variable_sets(inst, delta, x_k).suc;
    suc_pi.difference(&suc_delta).copied().collect()
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum Provenance {
    SemiCompat,
    Block,
    QbtpTriple,
    QbapTriple,
    QmmeTriple,
}

impl Provenance {
    fn as_str(&self) -> &'static str {
        match self {
            Provenance::SemiCompat => "semi-compat",
            Provenance::Block => "block",
            Provenance::QbtpTriple => "qbtp-triple",
            Provenance::QbapTriple => "qbap-triple",
            Provenance::QmmeTriple => "qmme-triple",
        }
    }
}

/// The ordering search problem: one variable per QCSP variable over
/// `{1..n}`, strict binary precedences, and ternary `w < max(u, v)` guards.
#[derive(Clone, Debug)]
pub struct OrderingProblem {
    pub n: usize,
    /// `u < v` pairs.
    pub binary: BTreeMap<(VarId, VarId), Provenance>,
    /// `w < max(u, v)` triples with `u <= v` canonical.
    pub ternary: BTreeMap<(VarId, VarId, VarId), Provenance>,
}

impl OrderingProblem {
    pub fn satisfied_by(&self, assignment: &[usize]) -> bool {
        self.binary
            .keys()
            .all(|&(u, v)| assignment[u.0] < assignment[v.0])
            && self
                .ternary
                .keys()
                .all(|&(w, u, v)| assignment[w.0] < assignment[u.0].max(assignment[v.0]))
    }

    fn add_binary(&mut self, u: VarId, v: VarId, tag: Provenance) {
        self.binary.entry((u, v)).or_insert(tag);
    }

    fn add_ternary(&mut self, w: VarId, u: VarId, v: VarId, tag: Provenance) {
        if u == v {
            // Degenerate max: w < u.
            self.add_binary(w, u, tag);
        } else {
            let (u, v) = if u < v { (u, v) } else { (v, u) };
            self.ternary.entry((w, u, v)).or_insert(tag);
        }
    }

    pub fn to_json(&self, inst: &Instance) -> serde_json::Value {
        serde_json::json!({
            "vars": inst.var_ids().map(|v| inst.name(v)).collect::<Vec<_>>(),
            "binary": self.binary.keys()
                .map(|&(u, v)| vec![inst.name(u), inst.name(v)])
                .collect::<Vec<_>>(),
            "ternary": self.ternary.keys()
                .map(|&(w, u, v)| vec![inst.name(w), inst.name(u), inst.name(v)])
                .collect::<Vec<_>>(),
            "provenance": {
                "binary": self.binary.values().map(|p| p.as_str()).collect::<Vec<_>>(),
                "ternary": self.ternary.values().map(|p| p.as_str()).collect::<Vec<_>>(),
            },
        })
    }
}

/// Whether the target pattern fails on the triple with `k` last. The checks
/// are symmetric in the first two variables, so each unordered pair is
/// tested once per candidate last variable.
fn pattern_fails_with_last(inst: &Instance, target: AdjointTarget, i: VarId, j: VarId, k: VarId) -> bool {
    match target {
        AdjointTarget::QbtpAdjoint | AdjointTarget::BlockQbtp => {
            qbtp_triple(inst, i, j, k).is_some()
        }
        AdjointTarget::QmmeAdjoint => min_of_max_triple(inst, i, j, k, true).is_some(),
    }
}

fn angle_fails_with_last(inst: &Instance, target: AdjointTarget, i: VarId, j: VarId, k: VarId) -> bool {
    match target {
        AdjointTarget::QbtpAdjoint | AdjointTarget::BlockQbtp => {
            qbap_triple(inst, i, j, k).is_some()
        }
        AdjointTarget::QmmeAdjoint => min_of_max_triple(inst, i, j, k, false).is_some(),
    }
}

/// Builds the ordering constraint system for the target class under the
/// instance's prefix.
pub fn build_ordering_problem(inst: &Instance, target: AdjointTarget) -> OrderingProblem {
    let n = inst.n();
    let pi = inst.prefix();
    let mut prob = OrderingProblem {
        n,
        binary: BTreeMap::new(),
        ternary: BTreeMap::new(),
    };

    // Step 1: compatibility precedences. Universals keep every variable that
    // follows them; the block target additionally freezes existentials
    // before their succeeding universals.
    for a in inst.var_ids() {
        for b in inst.var_ids() {
            if a == b || pi.rank(a) >= pi.rank(b) {
                continue;
            }
            if inst.is_universal(a) {
                prob.add_binary(a, b, Provenance::SemiCompat);
            } else if target == AdjointTarget::BlockQbtp && inst.is_universal(b) {
                prob.add_binary(a, b, Provenance::Block);
            }
        }
    }

    // Step 2: pattern guards for every unordered pair and candidate last
    // variable.
    let tag = match target {
        AdjointTarget::QmmeAdjoint => Provenance::QmmeTriple,
        _ => Provenance::QbtpTriple,
    };
    for i in inst.var_ids() {
        for j in inst.var_ids().filter(|&j| i < j) {
            for k in inst.var_ids().filter(|&k| k != i && k != j) {
                if pattern_fails_with_last(inst, target, i, j, k) {
                    prob.add_ternary(k, i, j, tag);
                }
            }
        }
    }

    // Step 3: angle guards over later existentials (skipped for the block
    // target, whose shifts never leave a block).
    if target != AdjointTarget::BlockQbtp {
        let tag = match target {
            AdjointTarget::QmmeAdjoint => Provenance::QmmeTriple,
            _ => Provenance::QbapTriple,
        };
        for k in inst.var_ids().filter(|&k| inst.is_existential(k)) {
            let suc_e = variable_sets(inst, pi, k).suc_exists;
            for &i in &suc_e {
                for &j in suc_e.iter().filter(|&&j| i <= j) {
                    if angle_fails_with_last(inst, target, i, j, k) {
                        prob.add_ternary(k, i, j, tag);
                    }
                }
            }
        }
    }
    prob
}

/// Enforces generalized arc consistency over domains `{1..n}` and, if no
/// domain empties, returns the per-variable maxima (a solution because every
/// constraint is max-closed).
pub fn solve_max_closed(prob: &OrderingProblem) -> Option<Vec<usize>> {
    let n = prob.n;
    let mut domains: Vec<BitSet> = (0..n)
        .map(|_| {
            let mut s = BitSet::empty(n + 1);
            for r in 1..=n {
                s.insert(r);
            }
            s
        })
        .collect();

    let mut changed = true;
    while changed {
        changed = false;
        for &(u, v) in prob.binary.keys() {
            // u needs a larger v-value; v needs a smaller u-value.
            let max_v = domains[v.0].max().unwrap_or(0);
            let before = domains[u.0].len();
            let keep: Vec<usize> = domains[u.0].iter().filter(|&a| a < max_v).collect();
            if keep.len() < before {
                domains[u.0] = rebuild(n, &keep);
                changed = true;
            }
            let min_u = domains[u.0].min().unwrap_or(n + 1);
            let before = domains[v.0].len();
            let keep: Vec<usize> = domains[v.0].iter().filter(|&b| b > min_u).collect();
            if keep.len() < before {
                domains[v.0] = rebuild(n, &keep);
                changed = true;
            }
            if domains[u.0].is_empty() || domains[v.0].is_empty() {
                return None;
            }
        }
        for &(w, u, v) in prob.ternary.keys() {
            // w needs some u- or v-value above it; u and v values need the
            // opposite side or w to leave room.
            let top = domains[u.0]
                .max()
                .unwrap_or(0)
                .max(domains[v.0].max().unwrap_or(0));
            let before = domains[w.0].len();
            let keep: Vec<usize> = domains[w.0].iter().filter(|&a| a < top).collect();
            if keep.len() < before {
                domains[w.0] = rebuild(n, &keep);
                changed = true;
            }
            let min_w = match domains[w.0].min() {
                Some(m) => m,
                None => return None,
            };
            for (side, other) in [(u, v), (v, u)] {
                let max_other = domains[other.0].max().unwrap_or(0);
                // A side value `a` is supported iff min_w < max(a, max_other).
                let before = domains[side.0].len();
                let keep: Vec<usize> = domains[side.0]
                    .iter()
                    .filter(|&a| min_w < a.max(max_other))
                    .collect();
                if keep.len() < before {
                    domains[side.0] = rebuild(n, &keep);
                    changed = true;
                }
                if domains[side.0].is_empty() {
                    return None;
                }
            }
        }
    }

    let assignment: Vec<usize> = domains.iter().map(|d| d.max().unwrap()).collect();
    debug_assert!(prob.satisfied_by(&assignment));
    Some(assignment)
}

fn rebuild(n: usize, keep: &[usize]) -> BitSet {
    let mut s = BitSet::empty(n + 1);
    for &k in keep {
        s.insert(k);
    }
    s
}

/// Sorts variables by assigned value, breaking ties by prefix rank, and
/// returns the resulting bijection.
pub fn derive_ordering(assignment: &[usize], pi: &VariableOrder) -> VariableOrder {
    let mut vars: Vec<VarId> = (0..assignment.len()).map(VarId).collect();
    vars.sort_by_key(|&v| (assignment[v.0], pi.rank(v)));
    VariableOrder::from_sequence(vars).expect("sorted variables form a bijection")
}

/// One angle-property check performed during verification.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct AngleCheck {
    pub vars: [VarId; 3],
    pub holds: bool,
}

/// Independent verification of a candidate ordering: compatibility, the
/// target pattern under the new order, and the angle property for every
/// later-existential pair inside each dif set. Strict mode additionally
/// evaluates dif members the construction does not guard (universals and
/// same-block existentials) and records failures as warnings.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct VerificationRecord {
    pub compatible: bool,
    pub pattern: bool,
    pub angle: bool,
    pub angle_checks: Vec<AngleCheck>,
    pub strict_warnings: Vec<AngleCheck>,
}

impl VerificationRecord {
    pub fn all_ok(&self) -> bool {
        self.compatible && self.pattern && self.angle
    }

    pub fn to_json(&self, inst: &Instance) -> serde_json::Value {
        let checks = |list: &[AngleCheck]| {
            list.iter()
                .map(|c| {
                    serde_json::json!({
                        "vars": c.vars.iter().map(|&v| inst.name(v)).collect::<Vec<_>>(),
                        "holds": c.holds,
                    })
                })
                .collect::<Vec<_>>()
        };
        serde_json::json!({
            "compatible": self.compatible,
            "pattern": self.pattern,
            "angle": self.angle,
            "angle_checks": checks(&self.angle_checks),
            "strict_warnings": checks(&self.strict_warnings),
        })
    }
}

/// A verified adjoint ordering.
#[derive(Clone, Debug)]
pub struct AdjointResult {
    pub target: AdjointTarget,
    pub delta: VariableOrder,
    pub verification: VerificationRecord,
}

impl AdjointResult {
    pub fn to_json(&self, inst: &Instance) -> serde_json::Value {
        let delta: BTreeMap<&str, usize> = inst
            .var_ids()
            .map(|v| (inst.name(v), self.delta.rank(v)))
            .collect();
        serde_json::json!({
            "found": true,
            "delta": delta,
            "class": self.target.as_str(),
            "verified": self.verification.to_json(inst),
        })
    }
}

/// Runs the target's declared checks against a candidate ordering.
pub fn verify_adjoint(
    inst: &Instance,
    delta: &VariableOrder,
    target: AdjointTarget,
    strict: bool,
) -> VerificationRecord {
    let pi = inst.prefix();
    let mut record = VerificationRecord {
        compatible: match target {
            AdjointTarget::BlockQbtp => is_block_compatible(inst, pi, delta),
            _ => is_semi_compatible(inst, pi, delta),
        },
        pattern: match target {
            AdjointTarget::QmmeAdjoint => qmme_holds(inst, delta).holds(),
            _ => qbtp_holds(inst, delta).holds(),
        },
        angle: true,
        ..VerificationRecord::default()
    };

    let angle_holds = |i: VarId, j: VarId, k: VarId| -> bool {
        let verdict = match target {
            AdjointTarget::QmmeAdjoint => extended_qmme_triple(inst, delta, i, j, k),
            _ => qbap_holds_triple(inst, delta, i, j, k),
        };
        matches!(verdict, Ok(TripleVerdict::Holds))
    };

    for k in pi.by_rank().filter(|&k| inst.is_existential(k)) {
        let dif = dif_set(inst, pi, delta, k);
        if dif.is_empty() {
            continue;
        }
        let suc_e = variable_sets(inst, pi, k).suc_exists;
        let mut guarded: Vec<VarId> = dif.intersection(&suc_e).copied().collect();
        guarded.sort_by_key(|&v| delta.rank(v));
        for (pos, &i) in guarded.iter().enumerate() {
            for &j in &guarded[pos..] {
                let holds = angle_holds(i, j, k);
                record.angle &= holds;
                record.angle_checks.push(AngleCheck {
                    vars: [i, j, k],
                    holds,
                });
            }
        }
        if strict {
            // Dif members the construction leaves to arc consistency or
            // strategy compatibility: universals and same-block existentials.
            let mut rest: Vec<VarId> = dif.iter().copied().filter(|v| !suc_e.contains(v)).collect();
            rest.sort_by_key(|&v| delta.rank(v));
            let mut all: Vec<VarId> = dif.iter().copied().collect();
            all.sort_by_key(|&v| delta.rank(v));
            for &i in &rest {
                for &j in &all {
                    let (i, j) = if delta.rank(i) <= delta.rank(j) {
                        (i, j)
                    } else {
                        (j, i)
                    };
                    let holds = angle_holds(i, j, k);
                    if !holds {
                        record.strict_warnings.push(AngleCheck {
                            vars: [i, j, k],
                            holds,
                        });
                    }
                }
            }
        }
    }
    record
}

/// Composes problem construction, the max-closed solve, and ordering
/// derivation, then verifies the result independently. `Ok(None)` means no
/// adjoint ordering exists for the target; a verification failure is a
/// defect, reported as an error.
pub fn find_adjoint(
    inst: &Instance,
    target: AdjointTarget,
    strict: bool,
) -> Result<Option<AdjointResult>, OrderingError> {
    let prob = build_ordering_problem(inst, target);
    let Some(assignment) = solve_max_closed(&prob) else {
        return Ok(None);
    };
    let delta = derive_ordering(&assignment, inst.prefix());
    let verification = verify_adjoint(inst, &delta, target, strict);
    if !verification.all_ok() {
        return Err(OrderingError::VerificationFailed {
            target,
            record: Box::new(verification),
        });
    }
    Ok(Some(AdjointResult {
        target,
        delta,
        verification,
    }))
}
