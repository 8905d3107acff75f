//! End-to-end classification and solving: arc consistency first, then the
//! class ladder (direct broken-triangle, block reordering, semi-compatible
//! adjoint, the min-of-max variants), with honest `UNKNOWN` for instances
//! outside every class.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::consistency::{enforce_qac, PruneTrace, QacOutcome};
use crate::model::Instance;
use crate::ordering::{find_adjoint, AdjointResult, AdjointTarget, OrderingError};
use crate::patterns::{qbtp_holds, qmme_holds, TripleVerdict, TripleWitness};
use crate::strategy::{
    build_compatible_solution, build_solution, reorder_blocks, shift_levels, verify_strategy,
    StrategyError, StrategyTree, ValueRule, DEFAULT_MAX_STRATEGY_NODES,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("ordering search defect: {0}")]
    Ordering(#[from] OrderingError),
    #[error("strategy construction defect: {0}")]
    Strategy(#[from] StrategyError),
    #[error("constructed strategy failed verification")]
    VerificationFailed,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ClassTag {
    QacEmpty,
    QbtpDirect,
    BlockQbtp,
    QbtpAdjoint,
    QmmeDirect,
    QmmeAdjoint,
    Outside,
}

impl ClassTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClassTag::QacEmpty => "qac-empty",
            ClassTag::QbtpDirect => "qbtp-direct",
            ClassTag::BlockQbtp => "block-qbtp",
            ClassTag::QbtpAdjoint => "qbtp-adjoint",
            ClassTag::QmmeDirect => "qmme-direct",
            ClassTag::QmmeAdjoint => "qmme-adjoint",
            ClassTag::Outside => "outside",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Verdict {
    Sat,
    Unsat,
    Unknown,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Sat => write!(f, "SAT"),
            Verdict::Unsat => write!(f, "UNSAT"),
            Verdict::Unknown => write!(f, "UNKNOWN"),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    /// Evaluate the unguarded dif-pair diagnostics during verification.
    pub strict: bool,
    /// Node limit for materialized strategies.
    pub max_strategy_nodes: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            strict: false,
            max_strategy_nodes: DEFAULT_MAX_STRATEGY_NODES,
        }
    }
}

/// Wall-clock measurements for the classification stages. Kept out of every
/// serialized report so identical inputs produce byte-identical outputs.
#[derive(Clone, Copy, Debug, Default)]
pub struct Timings {
    pub qac: Duration,
    pub classification: Duration,
}

/// Which tractable class (if any) an instance falls in, with witnesses.
#[derive(Clone, Debug)]
pub struct ClassificationReport {
    pub class: ClassTag,
    /// Prune log; `empty_at` set means the qac-empty outcome.
    pub qac_trace: PruneTrace,
    /// The arc-consistent reduced instance (absent when empty).
    pub reduced: Option<Instance>,
    /// First broken triple under the prefix, when the direct check failed.
    pub qbtp_witness: Option<TripleWitness>,
    /// The verified adjoint ordering, for the reordering classes.
    pub adjoint: Option<AdjointResult>,
    /// Label for pathways beyond the published sufficient conditions.
    pub extension: Option<&'static str>,
    pub timings: Timings,
}

impl ClassificationReport {
    pub fn verdict(&self) -> Verdict {
        match self.class {
            ClassTag::QacEmpty => Verdict::Unsat,
            ClassTag::Outside => Verdict::Unknown,
            _ => Verdict::Sat,
        }
    }

    pub fn to_json(&self, inst: &Instance) -> serde_json::Value {
        let reduced = self.reduced.as_ref();
        serde_json::json!({
            "class": self.class.as_str(),
            "qac": self.qac_trace.to_json(inst),
            "qbtp_witness": self
                .qbtp_witness
                .as_ref()
                .map(|w| w.to_json(reduced.unwrap_or(inst)))
                .unwrap_or(serde_json::Value::Null),
            "adjoint": self
                .adjoint
                .as_ref()
                .map(|a| a.to_json(inst))
                .unwrap_or(serde_json::Value::Null),
            "extension": self.extension,
        })
    }
}

/// Runs the classification ladder. Deterministic: the pathway order is
/// arc consistency, direct broken-triangle, block reordering, semi-compatible
/// adjoint, direct min-of-max, min-of-max adjoint, outside.
pub fn classify(inst: &Instance, opts: &SolveOptions) -> Result<ClassificationReport, PipelineError> {
    let started = Instant::now();
    let outcome = enforce_qac(inst);
    let qac_elapsed = started.elapsed();

    let mut report = ClassificationReport {
        class: ClassTag::Outside,
        qac_trace: outcome.trace().clone(),
        reduced: None,
        qbtp_witness: None,
        adjoint: None,
        extension: None,
        timings: Timings {
            qac: qac_elapsed,
            ..Timings::default()
        },
    };

    let reduced = match outcome {
        QacOutcome::Empty { .. } => {
            report.class = ClassTag::QacEmpty;
            report.timings.classification = started.elapsed();
            return Ok(report);
        }
        QacOutcome::Reduced { instance, .. } => instance,
    };

    let pi = reduced.prefix().clone();
    match qbtp_holds(&reduced, &pi) {
        TripleVerdict::Holds => {
            report.class = ClassTag::QbtpDirect;
        }
        TripleVerdict::Violated(w) => {
            report.qbtp_witness = Some(w);
            if let Some(found) = find_adjoint(&reduced, AdjointTarget::BlockQbtp, opts.strict)? {
                report.class = ClassTag::BlockQbtp;
                report.adjoint = Some(found);
            } else if let Some(found) =
                find_adjoint(&reduced, AdjointTarget::QbtpAdjoint, opts.strict)?
            {
                report.class = ClassTag::QbtpAdjoint;
                report.adjoint = Some(found);
            } else if qmme_holds(&reduced, &pi).holds() {
                report.class = ClassTag::QmmeDirect;
            } else if let Some(found) =
                find_adjoint(&reduced, AdjointTarget::QmmeAdjoint, opts.strict)?
            {
                report.class = ClassTag::QmmeAdjoint;
                report.adjoint = Some(found);
                report.extension = Some("qmme-search");
            }
        }
    }
    report.reduced = Some(reduced);
    report.timings.classification = started.elapsed();
    Ok(report)
}

/// A solve outcome: the verdict, the classification evidence, and (for SAT)
/// the strategy unless the size guard suppressed it.
#[derive(Clone, Debug)]
pub struct SolveResult {
    pub verdict: Verdict,
    pub report: ClassificationReport,
    pub strategy: Option<StrategyTree>,
    /// Set when a SAT strategy was omitted for exceeding the node limit.
    pub omitted_nodes: Option<u128>,
}

impl SolveResult {
    pub fn to_json(&self, inst: &Instance) -> serde_json::Value {
        serde_json::json!({
            "verdict": self.verdict.to_string(),
            "report": self.report.to_json(inst),
            "strategy": self
                .strategy
                .as_ref()
                .map(|s| s.to_json(inst))
                .unwrap_or(serde_json::Value::Null),
            "omitted_nodes": self.omitted_nodes.map(|n| n.to_string()),
        })
    }
}

/// Classifies and, for the satisfiable classes, constructs a strategy under
/// the original prefix: directly, by block reordering, or by the compatible
/// construction followed by level shifting and block reordering. The
/// returned strategy always verifies; `outside` yields `UNKNOWN`, never a
/// guess.
pub fn solve(inst: &Instance, opts: &SolveOptions) -> Result<SolveResult, PipelineError> {
    let report = classify(inst, opts)?;
    let verdict = report.verdict();
    let mut result = SolveResult {
        verdict,
        report,
        strategy: None,
        omitted_nodes: None,
    };
    if verdict != Verdict::Sat {
        return Ok(result);
    }
    let reduced = result.report.reduced.as_ref().expect("sat implies reduced");
    let pi = reduced.prefix().clone();

    let built = match result.report.class {
        ClassTag::QbtpDirect | ClassTag::QmmeDirect => {
            build_solution(reduced, &pi, opts.max_strategy_nodes)
        }
        ClassTag::BlockQbtp => {
            let delta = &result.report.adjoint.as_ref().expect("adjoint class").delta;
            build_solution(reduced, delta, opts.max_strategy_nodes)
                .and_then(|tree| reorder_blocks(&tree, reduced, delta, &pi))
        }
        ClassTag::QbtpAdjoint | ClassTag::QmmeAdjoint => {
            let delta = &result.report.adjoint.as_ref().expect("adjoint class").delta;
            let rule = if result.report.class == ClassTag::QmmeAdjoint {
                ValueRule::Qmme
            } else {
                ValueRule::Qbtp
            };
            build_compatible_solution(reduced, &pi, delta, rule, opts.max_strategy_nodes)
                .and_then(|tree| {
                    let (shifted, omega) = shift_levels(&tree, reduced, &pi, delta)?;
                    reorder_blocks(&shifted, reduced, &omega, &pi)
                })
        }
        ClassTag::QacEmpty | ClassTag::Outside => unreachable!("non-sat classes returned above"),
    };

    match built {
        Ok(tree) => {
            #[cfg(debug_assertions)]
            {
                assert!(
                    verify_strategy(reduced, &tree)
                        .map(|v| v.is_valid())
                        .unwrap_or(false),
                    "constructed strategy must verify"
                );
            }
            if !verify_strategy(reduced, &tree)
                .map(|v| v.is_valid())
                .unwrap_or(false)
            {
                return Err(PipelineError::VerificationFailed);
            }
            result.strategy = Some(tree);
        }
        Err(StrategyError::TooLarge { nodes, .. }) => {
            result.omitted_nodes = Some(nodes);
        }
        Err(e) => return Err(e.into()),
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_instance, GenParams, ValueId, VarId};
    use crate::ordering::{find_adjoint, AdjointTarget};
    use crate::test_fixtures::{example2_delta, example2_instance, k4_coloring_text};

    #[test]
    fn classify_example2_is_qbtp_adjoint_with_expected_delta() {
        let inst = example2_instance();
        let report = classify(&inst, &SolveOptions::default()).unwrap();
        assert_eq!(report.class, ClassTag::QbtpAdjoint);
        assert!(report.qac_trace.removals.is_empty());
        let w = report.qbtp_witness.as_ref().unwrap();
        assert_eq!(w.vars, [VarId(0), VarId(1), VarId(2)]);
        assert_eq!(report.adjoint.as_ref().unwrap().delta, example2_delta());
    }

    #[test]
    fn classify_generated_qbtp_instances_as_direct() {
        // Arc consistency preserves the triangle property, so certified
        // instances land in qbtp-direct unless reduction empties a domain.
        let mut direct = 0;
        for seed in 0..12u64 {
            let params = GenParams::new(6, 3, "EAEAEE", 0.4, 0.7, seed)
                .ensure(crate::model::EnsureClass::Qbtp);
            let inst = crate::model::generate_instance(&params).unwrap();
            let report = classify(&inst, &SolveOptions::default()).unwrap();
            match report.class {
                ClassTag::QbtpDirect => direct += 1,
                ClassTag::QacEmpty => {}
                other => panic!("unexpected class {other:?}"),
            }
        }
        assert!(direct > 0, "no seed produced a non-empty instance");
    }

    #[test]
    fn forall_forall_incomplete_is_qac_empty_and_unsat() {
        let text = "qcsp 2\nvar x1 A 0 1\nvar x2 A 0 1\ncon x1 x2 : 0,0 0,1\n";
        let inst = parse_instance(text).unwrap();
        let result = solve(&inst, &SolveOptions::default()).unwrap();
        assert_eq!(result.report.class, ClassTag::QacEmpty);
        assert_eq!(result.verdict, Verdict::Unsat);
        assert!(result.strategy.is_none());
    }

    #[test]
    fn solve_example2_sat_with_root_a1() {
        let inst = example2_instance();
        let result = solve(&inst, &SolveOptions::default()).unwrap();
        assert_eq!(result.verdict, Verdict::Sat);
        let tree = result.strategy.expect("strategy present");
        assert!(tree.order.is_identity());
        assert_eq!(tree.roots.len(), 1);
        assert_eq!(tree.roots[0].value, ValueId(0)); // a1 at level 1
        assert_eq!(tree.scenarios().len(), 2);
        assert!(verify_strategy(&inst, &tree).unwrap().is_valid());
    }

    #[test]
    fn outside_instance_is_unknown() {
        let inst = parse_instance(&k4_coloring_text()).unwrap();
        let result = solve(&inst, &SolveOptions::default()).unwrap();
        assert_eq!(result.report.class, ClassTag::Outside);
        assert_eq!(result.verdict, Verdict::Unknown);
    }

    #[test]
    fn direct_classes_also_pass_the_reordering_searches() {
        for seed in [1u64, 9, 23] {
            let params = GenParams::new(5, 3, "EAEEA", 0.4, 0.75, seed)
                .ensure(crate::model::EnsureClass::Qbtp);
            let inst = crate::model::generate_instance(&params).unwrap();
            let report = classify(&inst, &SolveOptions::default()).unwrap();
            if report.class != ClassTag::QbtpDirect {
                continue;
            }
            let reduced = report.reduced.as_ref().unwrap();
            assert!(find_adjoint(reduced, AdjointTarget::BlockQbtp, false)
                .unwrap()
                .is_some());
            assert!(find_adjoint(reduced, AdjointTarget::QbtpAdjoint, false)
                .unwrap()
                .is_some());
        }
    }

    #[test]
    fn size_guard_omits_strategy_but_keeps_verdict() {
        let inst = parse_instance(
            "qcsp 3\nvar x1 A 0 1 2 3\nvar x2 A 0 1 2 3\nvar x3 E 0 1 2 3\n",
        )
        .unwrap();
        let opts = SolveOptions {
            max_strategy_nodes: 3,
            ..SolveOptions::default()
        };
        let result = solve(&inst, &opts).unwrap();
        assert_eq!(result.verdict, Verdict::Sat);
        assert!(result.strategy.is_none());
        assert!(result.omitted_nodes.is_some());
    }

    #[test]
    fn report_json_is_deterministic() {
        let inst = example2_instance();
        let a = classify(&inst, &SolveOptions::default())
            .unwrap()
            .to_json(&inst)
            .to_string();
        let b = classify(&inst, &SolveOptions::default())
            .unwrap()
            .to_json(&inst)
            .to_string();
        assert_eq!(a, b);
    }
}
