//! Microstructure pattern checks over variable triples: broken-triangle
//! (QBTP), broken-angle (QBAP), min-of-max extendability (QMME) and its
//! extended form, plus the support-containment formulation.
//!
//! All checks are pure reads; verdicts are deterministic: triples are scanned
//! in lexicographic rank order and values in domain order, first violation
//! wins.

use thiserror::Error;

use crate::model::{Instance, ValueId, VarId, VariableOrder};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PatternError {
    #[error("triple ranks must be ordered: got {ranks:?} (equal first pair allowed: {allow_equal})")]
    RankPrecondition {
        ranks: [usize; 3],
        allow_equal: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PatternKind {
    Qbtp,
    Qbap,
    Qmme,
    QmmeExtended,
}

impl PatternKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PatternKind::Qbtp => "qbtp",
            PatternKind::Qbap => "qbap",
            PatternKind::Qmme => "qmme",
            PatternKind::QmmeExtended => "qmme-extended",
        }
    }
}

/// A concrete triple-level violation. For the broken patterns all four
/// values are present; for the min-of-max patterns `gamma` is the computed
/// witness value (absent when a support set was empty) and `theta` is unused.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TripleWitness {
    pub pattern: PatternKind,
    pub vars: [VarId; 3],
    pub ranks: [usize; 3],
    pub alpha: ValueId,
    pub beta: ValueId,
    pub gamma: Option<ValueId>,
    pub theta: Option<ValueId>,
}

impl TripleWitness {
    pub fn to_json(&self, inst: &Instance) -> serde_json::Value {
        let val = |v: VarId, x: Option<ValueId>| match x {
            Some(x) => serde_json::Value::String(inst.value_name(v, x).to_string()),
            None => serde_json::Value::Null,
        };
        serde_json::json!({
            "pattern": self.pattern.as_str(),
            "vars": self.vars.iter().map(|&v| inst.name(v)).collect::<Vec<_>>(),
            "ranks": self.ranks,
            "values": {
                "alpha": inst.value_name(self.vars[0], self.alpha),
                "beta": inst.value_name(self.vars[1], self.beta),
                "gamma": val(self.vars[2], self.gamma),
                "theta": val(self.vars[2], self.theta),
            },
            "holds": false,
        })
    }

    /// Re-evaluates the violated implication against the instance.
    pub fn replays(&self, inst: &Instance) -> bool {
        let [i, j, k] = self.vars;
        let rik = inst.rel_view(i, k);
        let rjk = inst.rel_view(j, k);
        let (a, b) = (self.alpha.0, self.beta.0);
        match self.pattern {
            PatternKind::Qbtp | PatternKind::Qbap => {
                let (Some(g), Some(t)) = (self.gamma, self.theta) else {
                    return false;
                };
                let related_ok = self.pattern == PatternKind::Qbap
                    || i == j
                    || inst.rel_view(i, j).allows(a, b);
                related_ok
                    && rik.allows(a, g.0)
                    && rjk.allows(b, t.0)
                    && !rik.allows(a, t.0)
                    && !rjk.allows(b, g.0)
            }
            PatternKind::Qmme | PatternKind::QmmeExtended => {
                let related_ok = self.pattern == PatternKind::QmmeExtended
                    || inst.rel_view(i, j).allows(a, b);
                if !related_ok {
                    return false;
                }
                let (sa, sb) = (rik.support(a), rjk.support(b));
                match (sa.max(), sb.max()) {
                    (Some(ma), Some(mb)) => {
                        let g = ma.min(mb);
                        self.gamma == Some(ValueId(g)) && !(sa.contains(g) && sb.contains(g))
                    }
                    _ => self.gamma.is_none(),
                }
            }
        }
    }
}

/// Verdict of a whole-instance or per-triple pattern check.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum TripleVerdict {
    Holds,
    Violated(TripleWitness),
}

impl TripleVerdict {
    pub fn holds(&self) -> bool {
        matches!(self, TripleVerdict::Holds)
    }

    pub fn witness(&self) -> Option<&TripleWitness> {
        match self {
            TripleVerdict::Holds => None,
            TripleVerdict::Violated(w) => Some(w),
        }
    }
}

/// First broken-triangle violation on the triple with `k` last, scanning
/// (alpha, beta) in domain order. The verdict depends only on which variable
/// is last; `i`, `j` are interchangeable.
pub(crate) fn qbtp_triple(
    inst: &Instance,
    i: VarId,
    j: VarId,
    k: VarId,
) -> Option<(usize, usize, usize, usize)> {
    let rij = inst.rel_view(i, j);
    broken_pair_scan(inst, i, j, k, |a, b| rij.allows(a, b))
}

/// First broken-angle violation: every value pair is tested, membership in
/// `R_ij` is not required, and `i == j` is allowed (both values then range
/// over the one domain).
pub(crate) fn qbap_triple(
    inst: &Instance,
    i: VarId,
    j: VarId,
    k: VarId,
) -> Option<(usize, usize, usize, usize)> {
    broken_pair_scan(inst, i, j, k, |_, _| true)
}

fn broken_pair_scan(
    inst: &Instance,
    i: VarId,
    j: VarId,
    k: VarId,
    pair_in_scope: impl Fn(usize, usize) -> bool,
) -> Option<(usize, usize, usize, usize)> {
    let rik = inst.rel_view(i, k);
    let rjk = inst.rel_view(j, k);
    // Two implicit-complete sides can never break.
    if !rik.is_constrained() && !rjk.is_constrained() {
        return None;
    }
    let dk = inst.domain_size(k);
    for a in 0..inst.domain_size(i) {
        let sup_a = rik.support(a);
        for b in 0..inst.domain_size(j) {
            if !pair_in_scope(a, b) {
                continue;
            }
            let sup_b = rjk.support(b);
            // Containment in either direction is equivalent to the
            // definition's implication; witnesses still need the values.
            if sup_a.is_subset_of(&sup_b) || sup_b.is_subset_of(&sup_a) {
                continue;
            }
            for g in 0..dk {
                if !sup_a.contains(g) || sup_b.contains(g) {
                    continue;
                }
                for t in 0..dk {
                    if sup_b.contains(t) && !sup_a.contains(t) {
                        return Some((a, b, g, t));
                    }
                }
            }
        }
    }
    None
}

/// First min-of-max violation on the triple with `k` last: for each pair in
/// scope, `gamma = min(max R_ik(alpha), max R_jk(beta))` must be supported by
/// both sides; an empty support set fails with `gamma = None`.
pub(crate) fn min_of_max_triple(
    inst: &Instance,
    i: VarId,
    j: VarId,
    k: VarId,
    require_related: bool,
) -> Option<(usize, usize, Option<usize>)> {
    let rij = (i != j).then(|| inst.rel_view(i, j));
    let rik = inst.rel_view(i, k);
    let rjk = inst.rel_view(j, k);
    if !rik.is_constrained() && !rjk.is_constrained() && inst.domain_size(k) > 0 {
        return None;
    }
    for a in 0..inst.domain_size(i) {
        let sup_a = rik.support(a);
        for b in 0..inst.domain_size(j) {
            if require_related && !rij.map_or(true, |r| r.allows(a, b)) {
                continue;
            }
            let sup_b = rjk.support(b);
            match (sup_a.max(), sup_b.max()) {
                (Some(ma), Some(mb)) => {
                    let g = ma.min(mb);
                    if !(sup_a.contains(g) && sup_b.contains(g)) {
                        return Some((a, b, Some(g)));
                    }
                }
                _ => return Some((a, b, None)),
            }
        }
    }
    None
}

fn ordered_triples(ord: &VariableOrder) -> impl Iterator<Item = (VarId, VarId, VarId)> + '_ {
    let n = ord.len();
    (1..=n).flat_map(move |ri| {
        (ri + 1..=n).flat_map(move |rj| {
            (rj + 1..=n).map(move |rk| (ord.var_at(ri), ord.var_at(rj), ord.var_at(rk)))
        })
    })
}

/// Broken-triangle property over every `ord`-ordered triple.
pub fn qbtp_holds(inst: &Instance, ord: &VariableOrder) -> TripleVerdict {
    for (i, j, k) in ordered_triples(ord) {
        if let Some((a, b, g, t)) = qbtp_triple(inst, i, j, k) {
            return TripleVerdict::Violated(TripleWitness {
                pattern: PatternKind::Qbtp,
                vars: [i, j, k],
                ranks: [ord.rank(i), ord.rank(j), ord.rank(k)],
                alpha: ValueId(a),
                beta: ValueId(b),
                gamma: Some(ValueId(g)),
                theta: Some(ValueId(t)),
            });
        }
    }
    TripleVerdict::Holds
}

/// Min-of-max extendability over every `ord`-ordered triple, with respect to
/// the declared domain total order.
pub fn qmme_holds(inst: &Instance, ord: &VariableOrder) -> TripleVerdict {
    for (i, j, k) in ordered_triples(ord) {
        if let Some((a, b, g)) = min_of_max_triple(inst, i, j, k, true) {
            return TripleVerdict::Violated(TripleWitness {
                pattern: PatternKind::Qmme,
                vars: [i, j, k],
                ranks: [ord.rank(i), ord.rank(j), ord.rank(k)],
                alpha: ValueId(a),
                beta: ValueId(b),
                gamma: g.map(ValueId),
                theta: None,
            });
        }
    }
    TripleVerdict::Holds
}

fn check_ranks(
    ord: &VariableOrder,
    i: VarId,
    j: VarId,
    k: VarId,
    allow_equal: bool,
) -> Result<[usize; 3], PatternError> {
    let ranks = [ord.rank(i), ord.rank(j), ord.rank(k)];
    let pair_ok = if allow_equal {
        ranks[0] <= ranks[1]
    } else {
        ranks[0] < ranks[1]
    };
    if !pair_ok || ranks[1] >= ranks[2] {
        return Err(PatternError::RankPrecondition { ranks, allow_equal });
    }
    Ok(ranks)
}

/// Support containment on one ordered triple: for every related pair, one
/// support set toward `k` contains the other. Equivalent to the per-triple
/// broken-triangle check; kept as an independent route for cross-checking.
pub fn containment_ordered(
    inst: &Instance,
    ord: &VariableOrder,
    i: VarId,
    j: VarId,
    k: VarId,
) -> Result<Result<(), (ValueId, ValueId)>, PatternError> {
    check_ranks(ord, i, j, k, false)?;
    let rij = inst.rel_view(i, j);
    let rik = inst.rel_view(i, k);
    let rjk = inst.rel_view(j, k);
    for a in 0..inst.domain_size(i) {
        let sup_a = rik.support(a);
        for b in 0..inst.domain_size(j) {
            if !rij.allows(a, b) {
                continue;
            }
            let sup_b = rjk.support(b);
            if !sup_a.is_subset_of(&sup_b) && !sup_b.is_subset_of(&sup_a) {
                return Ok(Err((ValueId(a), ValueId(b))));
            }
        }
    }
    Ok(Ok(()))
}

/// Broken-angle property on one triple; `i == j` is permitted and the rank
/// precondition is `ord(i) <= ord(j) < ord(k)`.
pub fn qbap_holds_triple(
    inst: &Instance,
    ord: &VariableOrder,
    i: VarId,
    j: VarId,
    k: VarId,
) -> Result<TripleVerdict, PatternError> {
    let ranks = check_ranks(ord, i, j, k, true)?;
    match qbap_triple(inst, i, j, k) {
        None => Ok(TripleVerdict::Holds),
        Some((a, b, g, t)) => Ok(TripleVerdict::Violated(TripleWitness {
            pattern: PatternKind::Qbap,
            vars: [i, j, k],
            ranks,
            alpha: ValueId(a),
            beta: ValueId(b),
            gamma: Some(ValueId(g)),
            theta: Some(ValueId(t)),
        })),
    }
}

/// Extended min-of-max check on one triple: every value pair regardless of
/// `R_ij` membership; `i == j` permitted.
pub fn extended_qmme_triple(
    inst: &Instance,
    ord: &VariableOrder,
    i: VarId,
    j: VarId,
    k: VarId,
) -> Result<TripleVerdict, PatternError> {
    let ranks = check_ranks(ord, i, j, k, true)?;
    match min_of_max_triple(inst, i, j, k, false) {
        None => Ok(TripleVerdict::Holds),
        Some((a, b, g)) => Ok(TripleVerdict::Violated(TripleWitness {
            pattern: PatternKind::QmmeExtended,
            vars: [i, j, k],
            ranks,
            alpha: ValueId(a),
            beta: ValueId(b),
            gamma: g.map(ValueId),
            theta: None,
        })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_instance;
    use crate::test_fixtures::{example2_delta, example2_instance};

    #[test]
    fn example2_breaks_under_prefix() {
        let inst = example2_instance();
        let w = match qbtp_holds(&inst, inst.prefix()) {
            TripleVerdict::Violated(w) => w,
            TripleVerdict::Holds => panic!("must violate"),
        };
        let names: Vec<&str> = w.vars.iter().map(|&v| inst.name(v)).collect();
        assert_eq!(names, vec!["x1", "x2", "x3"]);
        assert_eq!(inst.value_name(w.vars[0], w.alpha), "a2");
        assert_eq!(inst.value_name(w.vars[1], w.beta), "b1");
        assert_eq!(inst.value_name(w.vars[2], w.gamma.unwrap()), "c2");
        assert_eq!(inst.value_name(w.vars[2], w.theta.unwrap()), "c1");
        assert!(w.replays(&inst));
    }

    #[test]
    fn example2_holds_under_delta() {
        let inst = example2_instance();
        assert!(qbtp_holds(&inst, &example2_delta()).holds());
    }

    #[test]
    fn two_variable_instance_trivially_holds() {
        let inst = parse_instance("qcsp 2\nvar x E 0 1\nvar y A 0 1\ncon x y : 0,0\n").unwrap();
        assert!(qbtp_holds(&inst, inst.prefix()).holds());
        assert!(qmme_holds(&inst, inst.prefix()).holds());
    }

    #[test]
    fn containment_matches_paper_examples() {
        let inst = example2_instance();
        let delta = example2_delta();
        let (x1, x2, x3) = (VarId(0), VarId(1), VarId(2));
        // Under delta the triple (x2, x3, x1) has full R21 rows.
        assert_eq!(
            containment_ordered(&inst, &delta, x2, x3, x1).unwrap(),
            Ok(())
        );
        // Under the prefix, (a2, b1) has incomparable supports toward x3.
        assert_eq!(
            containment_ordered(&inst, inst.prefix(), x1, x2, x3).unwrap(),
            Err((ValueId(1), ValueId(0)))
        );
        // Precondition violation is an error, not a verdict.
        assert!(containment_ordered(&inst, inst.prefix(), x2, x1, x3).is_err());
    }

    #[test]
    fn containment_complete_relations() {
        let inst = parse_instance("qcsp 3\nvar x E 0 1\nvar y E 0 1\nvar z E 0 1\n").unwrap();
        assert_eq!(
            containment_ordered(&inst, inst.prefix(), VarId(0), VarId(1), VarId(2)).unwrap(),
            Ok(())
        );
    }

    #[test]
    fn qbap_example2_diagonal_triple() {
        let inst = example2_instance();
        let delta = example2_delta();
        let (x1, x3) = (VarId(0), VarId(2));
        assert!(qbap_holds_triple(&inst, &delta, x3, x3, x1)
            .unwrap()
            .holds());
    }

    #[test]
    fn qbap_disjoint_supports_violate() {
        // R_ik(0) = {0}, R_jk(0) = {1}: the only (gamma, theta) choice breaks.
        let text = "qcsp 3\nvar x E 0\nvar y E 0\nvar z E 0 1\n\
                    con x z : 0,0\ncon y z : 0,1\n";
        let inst = parse_instance(text).unwrap();
        let v = qbap_holds_triple(&inst, inst.prefix(), VarId(0), VarId(1), VarId(2)).unwrap();
        let w = v.witness().expect("violated");
        assert_eq!(
            (w.alpha, w.beta, w.gamma, w.theta),
            (ValueId(0), ValueId(0), Some(ValueId(0)), Some(ValueId(1)))
        );
        assert!(w.replays(&inst));
        // Complete relations satisfy the angle property.
        let free = parse_instance("qcsp 3\nvar x E 0\nvar y E 0\nvar z E 0 1\n").unwrap();
        assert!(qbap_holds_triple(&free, free.prefix(), VarId(0), VarId(1), VarId(2))
            .unwrap()
            .holds());
    }

    #[test]
    fn qmme_membership_of_min_of_max() {
        // R_ik = {(0,0),(0,1),(1,1)}, others complete: gamma = 1 everywhere.
        let text = "qcsp 3\nvar x E 0 1\nvar y E 0 1\nvar z E 0 1\n\
                    con x z : 0,0 0,1 1,1\n";
        let inst = parse_instance(text).unwrap();
        assert!(qmme_holds(&inst, inst.prefix()).holds());

        // R_ik = {(0,0)}, R_jk = {(0,1)}: gamma = min(0, 1) = 0 not in R_jk.
        let text = "qcsp 3\nvar x E 0 1\nvar y E 0 1\nvar z E 0 1\n\
                    con x z : 0,0 1,0 1,1\ncon y z : 0,1 1,0 1,1\n";
        let inst = parse_instance(text).unwrap();
        let w = match qmme_holds(&inst, inst.prefix()) {
            TripleVerdict::Violated(w) => w,
            TripleVerdict::Holds => panic!("must violate"),
        };
        assert_eq!((w.alpha, w.beta, w.gamma), (ValueId(0), ValueId(0), Some(ValueId(0))));
        assert!(w.replays(&inst));
    }

    #[test]
    fn qmme_empty_support_is_a_distinguished_failure() {
        let text = "qcsp 3\nvar x E 0 1\nvar y E 0 1\nvar z E 0 1\n\
                    con x z : 1,0 1,1\n";
        let inst = parse_instance(text).unwrap();
        let w = match qmme_holds(&inst, inst.prefix()) {
            TripleVerdict::Violated(w) => w,
            TripleVerdict::Holds => panic!("must violate"),
        };
        assert_eq!(w.gamma, None);
        assert!(w.replays(&inst));
    }

    #[test]
    fn extended_qmme_is_stricter_than_qmme() {
        // R_ij = {(0,0)} hides the failing pair (1,1) from the plain check.
        let text = "qcsp 3\nvar x E 0 1\nvar y E 0 1\nvar z E 0 1\n\
                    con x y : 0,0\n\
                    con x z : 0,0 0,1 1,0\ncon y z : 0,0 0,1 1,1\n";
        let inst = parse_instance(text).unwrap();
        assert!(qmme_holds(&inst, inst.prefix()).holds());
        let v =
            extended_qmme_triple(&inst, inst.prefix(), VarId(0), VarId(1), VarId(2)).unwrap();
        let w = v.witness().expect("extended check must fail");
        assert_eq!((w.alpha, w.beta), (ValueId(1), ValueId(1)));
        assert!(w.replays(&inst));
    }

    #[test]
    fn extended_qmme_diagonal_with_complete_side() {
        let inst = parse_instance("qcsp 2\nvar x E 0 1\nvar z E 0 1\n").unwrap();
        assert!(
            extended_qmme_triple(&inst, inst.prefix(), VarId(0), VarId(0), VarId(1))
                .unwrap()
                .holds()
        );
    }

    #[test]
    fn qbap_implies_qbtp_on_distinct_pairs() {
        for seed in 0..60u64 {
            let inst = crate::model::generate_instance(&crate::model::GenParams::new(
                4, 3, "EEAE", 0.8, 0.6, seed,
            ))
            .unwrap();
            let ord = inst.prefix();
            for (i, j, k) in super::ordered_triples(ord) {
                if qbap_holds_triple(&inst, ord, i, j, k).unwrap().holds() {
                    assert!(
                        qbtp_triple(&inst, i, j, k).is_none(),
                        "angle property must imply the triangle property"
                    );
                }
            }
        }
    }

    #[test]
    fn last_variable_symmetry() {
        for seed in 0..60u64 {
            let inst = crate::model::generate_instance(&crate::model::GenParams::new(
                3, 3, "EAE", 1.0, 0.5, seed,
            ))
            .unwrap();
            let (i, j, k) = (VarId(0), VarId(1), VarId(2));
            assert_eq!(
                qbtp_triple(&inst, i, j, k).is_none(),
                qbtp_triple(&inst, j, i, k).is_none()
            );
            assert_eq!(
                min_of_max_triple(&inst, i, j, k, true).is_none(),
                min_of_max_triple(&inst, j, i, k, true).is_none()
            );
            assert_eq!(
                qbap_triple(&inst, i, j, k).is_none(),
                qbap_triple(&inst, j, i, k).is_none()
            );
        }
    }

    #[test]
    fn lemma1_equivalence_between_routes() {
        for seed in 0..80u64 {
            let inst = crate::model::generate_instance(&crate::model::GenParams::new(
                5, 3, "EAEAE", 0.7, 0.55, seed,
            ))
            .unwrap();
            let ord = inst.prefix();
            for (i, j, k) in super::ordered_triples(ord) {
                let direct = qbtp_triple(&inst, i, j, k).is_none();
                let contained = containment_ordered(&inst, ord, i, j, k)
                    .unwrap()
                    .is_ok();
                assert_eq!(direct, contained, "routes disagree on seed {seed}");
            }
        }
    }

    #[test]
    fn qmme_verdict_stable_under_order_preserving_renaming() {
        for seed in 0..30u64 {
            let inst = crate::model::generate_instance(&crate::model::GenParams::new(
                4, 3, "EAEE", 0.8, 0.5, seed,
            ))
            .unwrap();
            let renamed = parse_instance(
                &crate::model::serialize_instance(&inst)
                    .lines()
                    .map(|l| l.replace("v1", "w10").replace("v2", "w20").replace("v3", "w30"))
                    .collect::<Vec<_>>()
                    .join("\n"),
            )
            .unwrap();
            assert_eq!(
                qmme_holds(&inst, inst.prefix()).holds(),
                qmme_holds(&renamed, renamed.prefix()).holds()
            );
        }
    }
}
