//! Quantified arc consistency: enforcement (existential domains only) and
//! checking, plus a directional quantified k-consistency checker for small k.
//!
//! Enforcement never mutates the input instance; it reduces a private copy of
//! the domains and rebuilds the instance at the fixpoint.

use std::collections::VecDeque;

use thiserror::Error;

use crate::bitset::BitSet;
use crate::model::{Instance, Quantifier, ValueId, VarId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConsistencyError {
    #[error("k must satisfy 2 <= k <= n, got k={k} with n={n}")]
    InvalidK { k: usize, n: usize },
}

/// One pruned value; `because` is the revised pair in prefix-rank order.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PruneRecord {
    pub var: VarId,
    pub value: ValueId,
    pub value_name: String,
    pub because: (VarId, VarId),
}

/// Ordered log of removals; `empty_at` marks the wipeout variable when
/// enforcement hit an empty existential domain or an unsupported universal
/// value.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct PruneTrace {
    pub removals: Vec<PruneRecord>,
    pub empty_at: Option<VarId>,
}

impl PruneTrace {
    pub fn is_empty_outcome(&self) -> bool {
        self.empty_at.is_some()
    }

    pub fn to_json(&self, inst: &Instance) -> serde_json::Value {
        if let Some(at) = self.empty_at {
            serde_json::json!({ "empty": true, "at": inst.name(at) })
        } else {
            self.removals_json(inst)
        }
    }

    pub fn removals_json(&self, inst: &Instance) -> serde_json::Value {
        serde_json::Value::Array(
            self.removals
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "var": inst.name(r.var),
                        "value": r.value_name,
                        "because": [inst.name(r.because.0), inst.name(r.because.1)],
                    })
                })
                .collect(),
        )
    }
}

/// Result of enforcing quantified arc consistency.
#[derive(Clone, Debug)]
pub enum QacOutcome {
    Reduced { instance: Instance, trace: PruneTrace },
    Empty { trace: PruneTrace },
}

impl QacOutcome {
    pub fn trace(&self) -> &PruneTrace {
        match self {
            QacOutcome::Reduced { trace, .. } | QacOutcome::Empty { trace } => trace,
        }
    }

    pub fn reduced(&self) -> Option<&Instance> {
        match self {
            QacOutcome::Reduced { instance, .. } => Some(instance),
            QacOutcome::Empty { .. } => None,
        }
    }
}

/// A violation witness: either a pair-support failure or a k-tuple whose
/// consistent partial assignment does not extend.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum ConsistencyWitness {
    /// `value` of `var` lacks the support required against `other`
    /// (for a universal `var` this includes incomplete-relation cases).
    Pair {
        first: VarId,
        second: VarId,
        var: VarId,
        value: ValueId,
    },
    /// The assignment to `vars[..k-1]` is consistent but fails to extend to
    /// `vars[k-1]`: for an existential tail no value works (`value: None`),
    /// for a universal tail `value` is a non-extending domain value.
    KTuple {
        vars: Vec<VarId>,
        assignment: Vec<ValueId>,
        value: Option<ValueId>,
    },
}

struct Propagator<'a> {
    inst: &'a Instance,
    domains: Vec<BitSet>,
    trace: PruneTrace,
}

impl<'a> Propagator<'a> {
    fn new(inst: &'a Instance) -> Self {
        Propagator {
            inst,
            domains: inst
                .var_ids()
                .map(|v| BitSet::full(inst.domain_size(v)))
                .collect(),
            trace: PruneTrace::default(),
        }
    }

    fn remove(&mut self, var: VarId, value: usize, because: (VarId, VarId)) -> bool {
        self.domains[var.0].remove(value);
        self.trace.removals.push(PruneRecord {
            var,
            value: ValueId(value),
            value_name: self.inst.value_name(var, ValueId(value)).to_string(),
            because,
        });
        if self.domains[var.0].is_empty() {
            self.trace.empty_at = Some(var);
            return false;
        }
        true
    }

    /// Applies the four support cases to the ordered pair (i before j).
    /// Returns (changed vars, alive).
    fn revise(&mut self, i: VarId, j: VarId) -> (Vec<VarId>, bool) {
        let mut changed = Vec::new();
        let because = (i, j);
        let qi = self.inst.quantifier(i);
        let qj = self.inst.quantifier(j);
        let view_ij = self.inst.rel_view(i, j);

        // Forward direction: values of i against domain of j.
        let vals_i: Vec<usize> = self.domains[i.0].iter().collect();
        for a in vals_i {
            let sup = view_ij.support(a);
            let ok = match qj {
                // j universal: a must be supported by every value of j.
                Quantifier::Forall => self.domains[j.0].iter().all(|b| sup.contains(b)),
                // j existential: a needs at least one support.
                Quantifier::Exists => self.domains[j.0].iter().any(|b| sup.contains(b)),
            };
            if !ok {
                match qi {
                    Quantifier::Forall => {
                        // A universal value can never be removed.
                        self.trace.empty_at = Some(i);
                        return (changed, false);
                    }
                    Quantifier::Exists => {
                        if !changed.contains(&i) {
                            changed.push(i);
                        }
                        if !self.remove(i, a, because) {
                            return (changed, false);
                        }
                    }
                }
            }
        }

        // Reverse direction: values of j against the (possibly reduced)
        // domain of i. Per the case table, j's values only ever need an
        // existential-style support here.
        let view_ji = self.inst.rel_view(j, i);
        let vals_j: Vec<usize> = self.domains[j.0].iter().collect();
        for b in vals_j {
            let sup = view_ji.support(b);
            let ok = self.domains[i.0].iter().any(|a| sup.contains(a));
            if !ok {
                match qj {
                    Quantifier::Forall => {
                        self.trace.empty_at = Some(j);
                        return (changed, false);
                    }
                    Quantifier::Exists => {
                        if !changed.contains(&j) {
                            changed.push(j);
                        }
                        if !self.remove(j, b, because) {
                            return (changed, false);
                        }
                    }
                }
            }
        }
        (changed, true)
    }
}

fn ordered_pair(inst: &Instance, a: VarId, b: VarId) -> (VarId, VarId) {
    if inst.prefix().rank(a) < inst.prefix().rank(b) {
        (a, b)
    } else {
        (b, a)
    }
}

fn constrained_pairs(inst: &Instance) -> Vec<(VarId, VarId)> {
    let mut pairs: Vec<(VarId, VarId)> = inst
        .constraints()
        .map(|(a, b, _)| ordered_pair(inst, a, b))
        .collect();
    pairs.sort_by_key(|&(i, j)| (inst.prefix().rank(i), inst.prefix().rank(j)));
    pairs
}

/// Enforces quantified arc consistency under the instance's own prefix.
/// Only existential domains shrink; a forced universal removal or an emptied
/// existential domain yields `Empty`. Idempotent.
pub fn enforce_qac(inst: &Instance) -> QacOutcome {
    let mut prop = Propagator::new(inst);
    let pairs = constrained_pairs(inst);
    let mut queue: VecDeque<(VarId, VarId)> = pairs.iter().copied().collect();
    let mut queued: std::collections::BTreeSet<(VarId, VarId)> = pairs.iter().copied().collect();

    while let Some((i, j)) = queue.pop_front() {
        queued.remove(&(i, j));
        let (changed, alive) = prop.revise(i, j);
        if !alive {
            return QacOutcome::Empty { trace: prop.trace };
        }
        for v in changed {
            for &(a, b) in &pairs {
                if (a == v || b == v) && queued.insert((a, b)) {
                    queue.push_back((a, b));
                }
            }
        }
    }

    let instance = inst.restrict(&prop.domains);
    QacOutcome::Reduced {
        instance,
        trace: prop.trace,
    }
}

/// Pure check: `Ok(())` iff `enforce_qac` would change nothing; otherwise the
/// first violating (pair, value) in prefix-rank and domain order.
pub fn is_qac(inst: &Instance) -> Result<(), ConsistencyWitness> {
    for (i, j) in constrained_pairs(inst) {
        let view_ij = inst.rel_view(i, j);
        let dj = inst.domain_size(j);
        for a in 0..inst.domain_size(i) {
            let sup = view_ij.support(a);
            let ok = match inst.quantifier(j) {
                Quantifier::Forall => sup.len() == dj,
                Quantifier::Exists => !sup.is_empty(),
            };
            if !ok {
                return Err(ConsistencyWitness::Pair {
                    first: i,
                    second: j,
                    var: i,
                    value: ValueId(a),
                });
            }
        }
        let view_ji = inst.rel_view(j, i);
        for b in 0..dj {
            if view_ji.support(b).is_empty() {
                return Err(ConsistencyWitness::Pair {
                    first: i,
                    second: j,
                    var: j,
                    value: ValueId(b),
                });
            }
        }
    }
    Ok(())
}

/// Outcome of the directional k-consistency check.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum KConsistency {
    Consistent,
    Violated(ConsistencyWitness),
    /// The configurable work cap was hit before a verdict.
    CapExceeded { steps: u64 },
}

pub const DEFAULT_K_WORK_CAP: u64 = 100_000_000;

/// Checks directional quantified k-consistency under the instance prefix:
/// every consistent assignment to the first k-1 variables of a prefix-ordered
/// k-tuple extends to the last (some value if existential, all values if
/// universal). Cost grows as n^k d^k; `work_cap` bounds the explored
/// combinations.
pub fn is_directional_k_consistent(
    inst: &Instance,
    k: usize,
    work_cap: u64,
) -> Result<KConsistency, ConsistencyError> {
    let n = inst.n();
    if k < 2 || k > n {
        return Err(ConsistencyError::InvalidK { k, n });
    }
    let by_rank: Vec<VarId> = inst.prefix().by_rank().collect();
    let mut steps: u64 = 0;

    let mut tuple_idx: Vec<usize> = (0..k).collect();
    loop {
        let vars: Vec<VarId> = tuple_idx.iter().map(|&i| by_rank[i]).collect();
        let tail = vars[k - 1];
        let heads = &vars[..k - 1];

        // Odometer over assignments to the k-1 head variables.
        let sizes: Vec<usize> = heads.iter().map(|&v| inst.domain_size(v)).collect();
        if sizes.iter().all(|&s| s > 0) {
            let mut assign = vec![0usize; k - 1];
            'assignments: loop {
                steps += 1;
                if steps > work_cap {
                    return Ok(KConsistency::CapExceeded { steps });
                }
                let consistent = (0..k - 1).all(|p| {
                    (p + 1..k - 1).all(|q| {
                        inst.rel_view(heads[p], heads[q]).allows(assign[p], assign[q])
                    })
                });
                if consistent {
                    let extends = |gamma: usize| {
                        (0..k - 1)
                            .all(|p| inst.rel_view(heads[p], tail).allows(assign[p], gamma))
                    };
                    let dt = inst.domain_size(tail);
                    match inst.quantifier(tail) {
                        Quantifier::Exists => {
                            if !(0..dt).any(extends) {
                                return Ok(KConsistency::Violated(ConsistencyWitness::KTuple {
                                    vars,
                                    assignment: assign.iter().map(|&a| ValueId(a)).collect(),
                                    value: None,
                                }));
                            }
                        }
                        Quantifier::Forall => {
                            if let Some(gamma) = (0..dt).find(|&g| !extends(g)) {
                                return Ok(KConsistency::Violated(ConsistencyWitness::KTuple {
                                    vars,
                                    assignment: assign.iter().map(|&a| ValueId(a)).collect(),
                                    value: Some(ValueId(gamma)),
                                }));
                            }
                        }
                    }
                }
                // Advance the odometer.
                for p in (0..k - 1).rev() {
                    assign[p] += 1;
                    if assign[p] < sizes[p] {
                        continue 'assignments;
                    }
                    assign[p] = 0;
                    if p == 0 {
                        break 'assignments;
                    }
                }
            }
        }

        // Next k-combination of ranks in lexicographic order.
        let mut p = k;
        loop {
            if p == 0 {
                return Ok(KConsistency::Consistent);
            }
            p -= 1;
            if tuple_idx[p] != p + n - k {
                tuple_idx[p] += 1;
                for q in p + 1..k {
                    tuple_idx[q] = tuple_idx[q - 1] + 1;
                }
                break;
            }
        }
    }
}
