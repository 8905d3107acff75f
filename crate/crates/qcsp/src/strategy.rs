//! Strategy trees: adversarial solution trees whose levels follow a variable
//! ordering, universal levels fanning out over whole domains and existential
//! levels committing to one value per node.
//!
//! Besides plain construction and verification, this module implements the
//! compatibility-aware construction (one shared value per closest-universal
//! subtree), level shifting of existentials to just after their closest
//! universal, and within-block level reordering. The latter two are realized
//! by regrouping the scenario set under the new ordering, which preserves
//! every scenario's assignment set exactly and detects label conflicts.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::bitset::BitSet;
use crate::model::{
    closest_universal, Instance, Quantifier, ValueId, VarId, VariableOrder,
};

pub const DEFAULT_MAX_STRATEGY_NODES: u64 = 1_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StrategyError {
    #[error("strategy ordering does not match the requested ordering")]
    OrderMismatch,
    #[error("structural violation: {message}")]
    Structural { message: String },
    #[error("precondition violation: {message}")]
    Precondition { message: String },
    #[error("no consistent value for '{var}' on some path; the instance is not directionally consistent under this ordering")]
    NoConsistentValue { var: String },
    #[error("support sets toward '{var}' are not totally ordered by containment")]
    IncomparableSupports { var: String },
    #[error("min-of-max value for '{var}' is unsupported on some path")]
    ChosenValueUnsupported { var: String },
    #[error("labels for '{var}' differ inside one subtree; the tree is not compatible at that level")]
    CompatibilityViolated { var: String },
    #[error("orderings are not block-compatible")]
    NotBlockCompatible,
    #[error("strategy would need {nodes} nodes, above the limit of {limit}")]
    TooLarge { nodes: u128, limit: u64 },
}

/// Value rule used by the compatible construction.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ValueRule {
    /// Smallest member of the containment-minimal support set.
    Qbtp,
    /// Minimum over path supports of each support's maximum.
    Qmme,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct StrategyNode {
    pub value: ValueId,
    pub children: Vec<StrategyNode>,
}

/// A strategy tree; level `i` (1-based) carries variable `order.var_at(i)`,
/// level 0 is the implicit value-less root.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct StrategyTree {
    pub order: VariableOrder,
    pub roots: Vec<StrategyNode>,
}

/// One root-to-leaf assignment path, in the tree's level order.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Scenario {
    pub assignments: Vec<(VarId, ValueId)>,
}

impl Scenario {
    pub fn assignment_set(&self) -> BTreeMap<VarId, ValueId> {
        self.assignments.iter().copied().collect()
    }

    pub fn display(&self, inst: &Instance) -> String {
        self.assignments
            .iter()
            .map(|&(v, x)| format!("{}={}", inst.name(v), inst.value_name(v, x)))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum StrategyVerdict {
    Valid,
    Inconsistent {
        scenario: Scenario,
        pair: (VarId, VarId),
    },
}

impl StrategyVerdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, StrategyVerdict::Valid)
    }
}

impl StrategyTree {
    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut out = Vec::new();
        let mut path = Vec::new();
        for root in &self.roots {
            self.walk(root, 1, &mut path, &mut out);
        }
        if self.roots.is_empty() && self.order.is_empty() {
            out.push(Scenario {
                assignments: Vec::new(),
            });
        }
        out
    }

    fn walk(
        &self,
        node: &StrategyNode,
        level: usize,
        path: &mut Vec<(VarId, ValueId)>,
        out: &mut Vec<Scenario>,
    ) {
        path.push((self.order.var_at(level), node.value));
        if node.children.is_empty() {
            out.push(Scenario {
                assignments: path.clone(),
            });
        } else {
            for child in &node.children {
                self.walk(child, level + 1, path, out);
            }
        }
        path.pop();
    }

    /// Sorted multiset key of scenario assignment-sets.
    pub fn scenario_multiset(&self) -> Vec<BTreeMap<VarId, ValueId>> {
        let mut sets: Vec<BTreeMap<VarId, ValueId>> = self
            .scenarios()
            .iter()
            .map(Scenario::assignment_set)
            .collect();
        sets.sort();
        sets
    }

    pub fn to_json(&self, inst: &Instance) -> serde_json::Value {
        fn node_json(
            inst: &Instance,
            order: &VariableOrder,
            node: &StrategyNode,
            level: usize,
        ) -> serde_json::Value {
            let var = order.var_at(level);
            serde_json::json!({
                "var": inst.name(var),
                "value": inst.value_name(var, node.value),
                "children": node
                    .children
                    .iter()
                    .map(|c| node_json(inst, order, c, level + 1))
                    .collect::<Vec<_>>(),
            })
        }
        serde_json::json!({
            "ordering": self.order.by_rank().map(|v| inst.name(v)).collect::<Vec<_>>(),
            "root": {
                "children": self
                    .roots
                    .iter()
                    .map(|r| node_json(inst, &self.order, r, 1))
                    .collect::<Vec<_>>(),
            },
        })
    }

    pub fn from_json(inst: &Instance, value: &serde_json::Value) -> Result<Self, StrategyError> {
        let bad = |message: &str| StrategyError::Structural {
            message: message.to_string(),
        };
        let ordering = value
            .get("ordering")
            .and_then(|o| o.as_array())
            .ok_or_else(|| bad("missing 'ordering' array"))?;
        let mut seq = Vec::new();
        for name in ordering {
            let name = name.as_str().ok_or_else(|| bad("ordering entries must be strings"))?;
            seq.push(
                inst.var_by_name(name)
                    .ok_or_else(|| bad(&format!("unknown variable '{name}' in ordering")))?,
            );
        }
        if seq.len() != inst.n() {
            return Err(bad("ordering must list every variable"));
        }
        let order = VariableOrder::from_sequence(seq).map_err(|e| bad(&e.to_string()))?;

        fn node_from(
            inst: &Instance,
            order: &VariableOrder,
            value: &serde_json::Value,
            level: usize,
        ) -> Result<StrategyNode, StrategyError> {
            let bad = |message: String| StrategyError::Structural { message };
            let var = order.var_at(level);
            let name = value
                .get("var")
                .and_then(|v| v.as_str())
                .ok_or_else(|| bad("node missing 'var'".into()))?;
            if name != inst.name(var) {
                return Err(bad(format!(
                    "node variable '{name}' does not match level variable '{}'",
                    inst.name(var)
                )));
            }
            let val_name = value
                .get("value")
                .and_then(|v| v.as_str())
                .ok_or_else(|| bad("node missing 'value'".into()))?;
            let val = inst
                .value_by_name(var, val_name)
                .ok_or_else(|| bad(format!("value '{val_name}' not in domain of '{name}'")))?;
            let children = match value.get("children") {
                Some(serde_json::Value::Array(cs)) => cs
                    .iter()
                    .map(|c| node_from(inst, order, c, level + 1))
                    .collect::<Result<Vec<_>, _>>()?,
                None => Vec::new(),
                Some(_) => return Err(bad("'children' must be an array".into())),
            };
            Ok(StrategyNode {
                value: val,
                children,
            })
        }

        let roots = value
            .get("root")
            .and_then(|r| r.get("children"))
            .and_then(|c| c.as_array())
            .ok_or_else(|| bad("missing 'root.children'"))?
            .iter()
            .map(|c| node_from(inst, &order, c, 1))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(StrategyTree { order, roots })
    }
}

/// Total node count the level-by-level construction would materialize.
pub fn expected_node_count(inst: &Instance, ord: &VariableOrder) -> u128 {
    let mut width: u128 = 1;
    let mut total: u128 = 0;
    for level in 1..=ord.len() {
        let v = ord.var_at(level);
        if inst.is_universal(v) {
            width = width.saturating_mul(inst.domain_size(v) as u128);
        }
        total = total.saturating_add(width);
    }
    total
}

fn check_size(inst: &Instance, ord: &VariableOrder, limit: u64) -> Result<(), StrategyError> {
    let nodes = expected_node_count(inst, ord);
    if nodes > limit as u128 {
        return Err(StrategyError::TooLarge { nodes, limit });
    }
    Ok(())
}

fn validate_children(
    inst: &Instance,
    order: &VariableOrder,
    children: &[StrategyNode],
    level: usize,
) -> Result<(), StrategyError> {
    let n = order.len();
    if level > n {
        if children.is_empty() {
            return Ok(());
        }
        return Err(StrategyError::Structural {
            message: "nodes below the last level".into(),
        });
    }
    let var = order.var_at(level);
    let d = inst.domain_size(var);
    match inst.quantifier(var) {
        Quantifier::Forall => {
            let mut seen = BTreeSet::new();
            for c in children {
                seen.insert(c.value);
            }
            if children.len() != d || seen.len() != d {
                return Err(StrategyError::Structural {
                    message: format!(
                        "universal level '{}' must carry each domain value exactly once",
                        inst.name(var)
                    ),
                });
            }
        }
        Quantifier::Exists => {
            if children.len() != 1 {
                return Err(StrategyError::Structural {
                    message: format!(
                        "existential level '{}' must have exactly one node per parent",
                        inst.name(var)
                    ),
                });
            }
        }
    }
    for c in children {
        if c.value.0 >= d {
            return Err(StrategyError::Structural {
                message: format!("value index {} out of domain of '{}'", c.value.0, inst.name(var)),
            });
        }
        if level == n && !c.children.is_empty() {
            return Err(StrategyError::Structural {
                message: "nodes below the last level".into(),
            });
        }
        if level < n && c.children.is_empty() {
            return Err(StrategyError::Structural {
                message: format!("leaf above level {n} (at '{}')", inst.name(var)),
            });
        }
        validate_children(inst, order, &c.children, level + 1)?;
    }
    Ok(())
}

/// Branching and depth validation against the instance.
pub fn validate_structure(inst: &Instance, s: &StrategyTree) -> Result<(), StrategyError> {
    if s.order.len() != inst.n() {
        return Err(StrategyError::Structural {
            message: "ordering length differs from the instance".into(),
        });
    }
    validate_children(inst, &s.order, &s.roots, 1)
}

/// Structural validation plus the consistency of every scenario. Structural
/// problems are errors; inconsistency is a verdict with the first failing
/// scenario (depth-first order) and the first violated pair (rank order).
pub fn verify_strategy(inst: &Instance, s: &StrategyTree) -> Result<StrategyVerdict, StrategyError> {
    validate_structure(inst, s)?;
    let mut pairs: Vec<(VarId, VarId)> = inst
        .constraints()
        .map(|(a, b, _)| {
            if s.order.rank(a) < s.order.rank(b) {
                (a, b)
            } else {
                (b, a)
            }
        })
        .collect();
    pairs.sort_by_key(|&(a, b)| (s.order.rank(a), s.order.rank(b)));

    for scenario in s.scenarios() {
        let by_var: BTreeMap<VarId, ValueId> = scenario.assignment_set();
        for &(a, b) in &pairs {
            let (va, vb) = (by_var[&a], by_var[&b]);
            if !inst.rel_view(a, b).allows(va.0, vb.0) {
                return Ok(StrategyVerdict::Inconsistent {
                    scenario,
                    pair: (a, b),
                });
            }
        }
    }
    Ok(StrategyVerdict::Valid)
}

fn path_supports(
    inst: &Instance,
    path: &[(VarId, ValueId)],
    target: VarId,
) -> BitSet {
    let mut acc = BitSet::full(inst.domain_size(target));
    for &(v, val) in path {
        if inst.constraint(v, target).is_some() {
            acc.intersect_with(&inst.rel_view(v, target).support(val.0).to_bitset());
        }
    }
    acc
}

fn build_plain(
    inst: &Instance,
    ord: &VariableOrder,
    level: usize,
    path: &mut Vec<(VarId, ValueId)>,
    rule: Option<ValueRule>,
) -> Result<Vec<StrategyNode>, StrategyError> {
    if level > ord.len() {
        return Ok(Vec::new());
    }
    let var = ord.var_at(level);
    match inst.quantifier(var) {
        Quantifier::Forall => (0..inst.domain_size(var))
            .map(|val| {
                path.push((var, ValueId(val)));
                let children = build_plain(inst, ord, level + 1, path, rule)?;
                path.pop();
                Ok(StrategyNode {
                    value: ValueId(val),
                    children,
                })
            })
            .collect(),
        Quantifier::Exists => {
            let chosen = match rule.unwrap_or(ValueRule::Qbtp) {
                ValueRule::Qbtp => path_supports(inst, path, var).min(),
                ValueRule::Qmme => {
                    let mut gamma: Option<usize> = None;
                    for &(v, val) in path.iter() {
                        if inst.constraint(v, var).is_some() {
                            let m = inst.rel_view(v, var).support(val.0).max();
                            gamma = match (gamma, m) {
                                (_, None) => {
                                    return Err(StrategyError::NoConsistentValue {
                                        var: inst.name(var).to_string(),
                                    })
                                }
                                (None, Some(m)) => Some(m),
                                (Some(g), Some(m)) => Some(g.min(m)),
                            };
                        }
                    }
                    let g = gamma.unwrap_or(inst.domain_size(var).saturating_sub(1));
                    if !path_supports(inst, path, var).contains(g) {
                        return Err(StrategyError::ChosenValueUnsupported {
                            var: inst.name(var).to_string(),
                        });
                    }
                    Some(g)
                }
            };
            let Some(val) = chosen else {
                return Err(StrategyError::NoConsistentValue {
                    var: inst.name(var).to_string(),
                });
            };
            path.push((var, ValueId(val)));
            let children = build_plain(inst, ord, level + 1, path, rule)?;
            path.pop();
            Ok(vec![StrategyNode {
                value: ValueId(val),
                children,
            }])
        }
    }
}

/// Level-by-level construction: universal levels fan out over the whole
/// domain, existential levels take the smallest value consistent with the
/// node's path. Requires directional global consistency under `ord`.
pub fn build_solution(
    inst: &Instance,
    ord: &VariableOrder,
    max_nodes: u64,
) -> Result<StrategyTree, StrategyError> {
    check_size(inst, ord, max_nodes)?;
    let mut path = Vec::new();
    let roots = build_plain(inst, ord, 1, &mut path, Some(ValueRule::Qbtp))?;
    Ok(StrategyTree {
        order: ord.clone(),
        roots,
    })
}

/// Like [`build_solution`] but existential levels take the min-of-max value
/// over the path supports (the witness value of min-of-max extendability).
pub fn build_solution_min_of_max(
    inst: &Instance,
    ord: &VariableOrder,
    max_nodes: u64,
) -> Result<StrategyTree, StrategyError> {
    check_size(inst, ord, max_nodes)?;
    let mut path = Vec::new();
    let roots = build_plain(inst, ord, 1, &mut path, Some(ValueRule::Qmme))?;
    Ok(StrategyTree {
        order: ord.clone(),
        roots,
    })
}

/// Compatibility per one (universal, existential) pair: every node at the
/// universal's level roots a subtree whose existential-level nodes all carry
/// one common label. `None` stands for the root sentinel.
pub fn is_compatible(
    s: &StrategyTree,
    inst: &Instance,
    x_i: Option<VarId>,
    x_j: VarId,
) -> Result<bool, StrategyError> {
    if !inst.is_existential(x_j) {
        return Err(StrategyError::Precondition {
            message: format!("'{}' must be existential", inst.name(x_j)),
        });
    }
    let level_j = s.order.rank(x_j);
    let level_i = match x_i {
        None => 0,
        Some(u) => {
            if !inst.is_universal(u) {
                return Err(StrategyError::Precondition {
                    message: format!("'{}' must be universal", inst.name(u)),
                });
            }
            s.order.rank(u)
        }
    };
    if level_i >= level_j || level_j > s.order.len() {
        return Err(StrategyError::Precondition {
            message: "levels must satisfy rank(x_i) < rank(x_j) <= n".into(),
        });
    }

    fn labels_at(node: &StrategyNode, depth: usize, target: usize, out: &mut BTreeSet<ValueId>) {
        if depth == target {
            out.insert(node.value);
            return;
        }
        for c in &node.children {
            labels_at(c, depth + 1, target, out);
        }
    }

    // Collect the subtree roots at level_i (the whole forest for the root
    // sentinel), then check single-label at level_j inside each.
    fn nodes_at<'a>(nodes: &'a [StrategyNode], depth: usize, target: usize, out: &mut Vec<&'a StrategyNode>) {
        for node in nodes {
            if depth == target {
                out.push(node);
            } else {
                nodes_at(&node.children, depth + 1, target, out);
            }
        }
    }

    if level_i == 0 {
        let mut labels = BTreeSet::new();
        for r in &s.roots {
            labels_at(r, 1, level_j, &mut labels);
        }
        return Ok(labels.len() <= 1);
    }
    let mut subtree_roots = Vec::new();
    nodes_at(&s.roots, 1, level_i, &mut subtree_roots);
    Ok(subtree_roots.iter().all(|w| {
        let mut labels = BTreeSet::new();
        labels_at(w, level_i, level_j, &mut labels);
        labels.len() <= 1
    }))
}

/// The compatibility-aware construction: at an existential level whose
/// closest universal differs between `pi` and `delta`, all new nodes inside
/// one closest-universal subtree share a single value chosen from the
/// containment-minimal support set (or by min-of-max, per `rule`).
pub fn build_compatible_solution(
    inst: &Instance,
    pi: &VariableOrder,
    delta: &VariableOrder,
    rule: ValueRule,
    max_nodes: u64,
) -> Result<StrategyTree, StrategyError> {
    check_size(inst, delta, max_nodes)?;
    let n = inst.n();

    struct Node {
        value: ValueId,
        parent: usize,
        children: Vec<usize>,
    }
    let mut arena: Vec<Node> = vec![Node {
        value: ValueId(0),
        parent: usize::MAX,
        children: Vec::new(),
    }];
    // levels[l] lists arena ids at level l; level 0 is the virtual root.
    let mut levels: Vec<Vec<usize>> = vec![vec![0]];

    let path_of = |arena: &Vec<Node>, mut id: usize, level: usize, delta: &VariableOrder| {
        let mut path = Vec::with_capacity(level);
        let mut l = level;
        while id != 0 {
            path.push((delta.var_at(l), arena[id].value));
            id = arena[id].parent;
            l -= 1;
        }
        path
    };

    for level in 1..=n {
        let var = delta.var_at(level);
        let frontier = levels[level - 1].clone();
        let mut next = Vec::new();
        match inst.quantifier(var) {
            Quantifier::Forall => {
                for &w in &frontier {
                    for val in 0..inst.domain_size(var) {
                        let id = arena.len();
                        arena.push(Node {
                            value: ValueId(val),
                            parent: w,
                            children: Vec::new(),
                        });
                        arena[w].children.push(id);
                        next.push(id);
                    }
                }
            }
            Quantifier::Exists => {
                let anchor_pi = closest_universal(inst, pi, var);
                let anchor_delta = closest_universal(inst, delta, var);
                if anchor_pi == anchor_delta {
                    // Ordinary extension: one scenario per node.
                    for &w in &frontier {
                        let path = path_of(&arena, w, level - 1, delta);
                        let val = choose_single(inst, var, &path, rule)?;
                        let id = arena.len();
                        arena.push(Node {
                            value: ValueId(val),
                            parent: w,
                            children: Vec::new(),
                        });
                        arena[w].children.push(id);
                        next.push(id);
                    }
                } else {
                    // Group the frontier by ancestor at the level of the
                    // prefix-closest universal (the root for the sentinel).
                    let group_level = anchor_pi.map_or(0, |u| delta.rank(u));
                    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
                    for &w in &frontier {
                        let mut id = w;
                        for _ in group_level..level - 1 {
                            id = arena[id].parent;
                        }
                        groups.entry(id).or_default().push(w);
                    }
                    for (_, members) in groups {
                        let mut assignments: BTreeSet<(VarId, ValueId)> = BTreeSet::new();
                        for &m in &members {
                            assignments.extend(path_of(&arena, m, level - 1, delta));
                        }
                        let val = choose_shared(inst, var, &assignments, rule)?;
                        for &m in &members {
                            let id = arena.len();
                            arena.push(Node {
                                value: ValueId(val),
                                parent: m,
                                children: Vec::new(),
                            });
                            arena[m].children.push(id);
                            next.push(id);
                        }
                    }
                }
            }
        }
        levels.push(next);
    }

    fn collect(arena: &[Node], id: usize) -> StrategyNode {
        StrategyNode {
            value: arena[id].value,
            children: arena[id].children.iter().map(|&c| collect(arena, c)).collect(),
        }
    }
    let roots = arena[0]
        .children
        .iter()
        .map(|&c| collect(&arena, c))
        .collect();
    Ok(StrategyTree {
        order: delta.clone(),
        roots,
    })
}

fn choose_single(
    inst: &Instance,
    var: VarId,
    path: &[(VarId, ValueId)],
    rule: ValueRule,
) -> Result<usize, StrategyError> {
    match rule {
        ValueRule::Qbtp => path_supports(inst, path, var)
            .min()
            .ok_or_else(|| StrategyError::NoConsistentValue {
                var: inst.name(var).to_string(),
            }),
        ValueRule::Qmme => {
            let assignments: BTreeSet<(VarId, ValueId)> = path.iter().copied().collect();
            choose_shared(inst, var, &assignments, rule)
        }
    }
}

fn choose_shared(
    inst: &Instance,
    var: VarId,
    assignments: &BTreeSet<(VarId, ValueId)>,
    rule: ValueRule,
) -> Result<usize, StrategyError> {
    let d = inst.domain_size(var);
    let supports: Vec<BitSet> = assignments
        .iter()
        .map(|&(v, val)| {
            if inst.constraint(v, var).is_some() {
                inst.rel_view(v, var).support(val.0).to_bitset()
            } else {
                BitSet::full(d)
            }
        })
        .collect();
    match rule {
        ValueRule::Qbtp => {
            let mut minimal = BitSet::full(d);
            for s in &supports {
                if s.is_subset_of(&minimal) {
                    minimal = s.clone();
                } else if !minimal.is_subset_of(s) {
                    return Err(StrategyError::IncomparableSupports {
                        var: inst.name(var).to_string(),
                    });
                }
            }
            minimal.min().ok_or_else(|| StrategyError::NoConsistentValue {
                var: inst.name(var).to_string(),
            })
        }
        ValueRule::Qmme => {
            let mut gamma: Option<usize> = None;
            for s in &supports {
                let m = s.max().ok_or_else(|| StrategyError::NoConsistentValue {
                    var: inst.name(var).to_string(),
                })?;
                gamma = Some(gamma.map_or(m, |g: usize| g.min(m)));
            }
            let g = gamma.unwrap_or(d.saturating_sub(1));
            if d == 0 {
                return Err(StrategyError::NoConsistentValue {
                    var: inst.name(var).to_string(),
                });
            }
            if supports.iter().any(|s| !s.contains(g)) {
                return Err(StrategyError::ChosenValueUnsupported {
                    var: inst.name(var).to_string(),
                });
            }
            Ok(g)
        }
    }
}

/// Regroups a scenario set as a strategy tree under `new_order`. Detects
/// label conflicts at existential levels (a compatibility violation) and
/// incomplete fans at universal levels (a structural violation).
fn rebuild_under(
    inst: &Instance,
    scenarios: &[BTreeMap<VarId, ValueId>],
    new_order: &VariableOrder,
) -> Result<StrategyTree, StrategyError> {
    fn build(
        inst: &Instance,
        scenarios: &[BTreeMap<VarId, ValueId>],
        idxs: &[usize],
        order: &VariableOrder,
        level: usize,
    ) -> Result<Vec<StrategyNode>, StrategyError> {
        if level > order.len() {
            return Ok(Vec::new());
        }
        let var = order.var_at(level);
        match inst.quantifier(var) {
            Quantifier::Exists => {
                let mut vals: BTreeSet<ValueId> = BTreeSet::new();
                for &i in idxs {
                    vals.insert(scenarios[i][&var]);
                }
                if vals.len() != 1 {
                    return Err(StrategyError::CompatibilityViolated {
                        var: inst.name(var).to_string(),
                    });
                }
                let value = *vals.iter().next().unwrap();
                Ok(vec![StrategyNode {
                    value,
                    children: build(inst, scenarios, idxs, order, level + 1)?,
                }])
            }
            Quantifier::Forall => {
                let mut parts: BTreeMap<ValueId, Vec<usize>> = BTreeMap::new();
                for &i in idxs {
                    parts.entry(scenarios[i][&var]).or_default().push(i);
                }
                if parts.len() != inst.domain_size(var) {
                    return Err(StrategyError::Structural {
                        message: format!(
                            "universal level '{}' does not cover its domain",
                            inst.name(var)
                        ),
                    });
                }
                parts
                    .into_iter()
                    .map(|(value, part)| {
                        Ok(StrategyNode {
                            value,
                            children: build(inst, scenarios, &part, order, level + 1)?,
                        })
                    })
                    .collect()
            }
        }
    }

    let idxs: Vec<usize> = (0..scenarios.len()).collect();
    let roots = if scenarios.is_empty() {
        Vec::new()
    } else {
        build(inst, scenarios, &idxs, new_order, 1)?
    };
    Ok(StrategyTree {
        order: new_order.clone(),
        roots,
    })
}

/// Shifts every existential level to just after its closest universal under
/// `pi` (stacking shifted existentials for one universal in `delta`-rank
/// order, so `delta == pi` is the identity). Scenario assignment-sets are
/// preserved exactly; the resulting ordering is block-compatible with `pi`.
pub fn shift_levels(
    s: &StrategyTree,
    inst: &Instance,
    pi: &VariableOrder,
    delta: &VariableOrder,
) -> Result<(StrategyTree, VariableOrder), StrategyError> {
    if &s.order != delta {
        return Err(StrategyError::OrderMismatch);
    }
    validate_structure(inst, s)?;

    // Existentials attach to the block following their closest pi-universal.
    let mut attached: BTreeMap<Option<VarId>, Vec<VarId>> = BTreeMap::new();
    for v in delta.by_rank().filter(|&v| inst.is_existential(v)) {
        attached
            .entry(closest_universal(inst, pi, v))
            .or_default()
            .push(v);
    }
    let mut seq: Vec<VarId> = Vec::with_capacity(inst.n());
    seq.extend(attached.get(&None).into_iter().flatten().copied());
    for u in delta.by_rank().filter(|&v| inst.is_universal(v)) {
        seq.push(u);
        seq.extend(attached.get(&Some(u)).into_iter().flatten().copied());
    }
    let omega = VariableOrder::from_sequence(seq).expect("shift preserves the bijection");

    let scenarios: Vec<BTreeMap<VarId, ValueId>> = s
        .scenarios()
        .iter()
        .map(Scenario::assignment_set)
        .collect();
    let tree = rebuild_under(inst, &scenarios, &omega)?;
    Ok((tree, omega))
}

/// Moves one level to just after `anchor` (the front for `None`), keeping
/// scenario assignment-sets; the single-shift building block of the full
/// level-shifting transformation.
pub fn shift_level_after(
    s: &StrategyTree,
    inst: &Instance,
    var: VarId,
    anchor: Option<VarId>,
) -> Result<StrategyTree, StrategyError> {
    validate_structure(inst, s)?;
    let mut seq: Vec<VarId> = s.order.by_rank().filter(|&v| v != var).collect();
    let at = match anchor {
        None => 0,
        Some(a) => {
            seq.iter()
                .position(|&v| v == a)
                .ok_or(StrategyError::Precondition {
                    message: "anchor not in the ordering".into(),
                })?
                + 1
        }
    };
    seq.insert(at, var);
    let new_order = VariableOrder::from_sequence(seq).expect("permutation preserved");
    let scenarios: Vec<BTreeMap<VarId, ValueId>> = s
        .scenarios()
        .iter()
        .map(Scenario::assignment_set)
        .collect();
    rebuild_under(inst, &scenarios, &new_order)
}

/// Permutes levels within blocks so the level order matches `pi`. Requires
/// `pi` block-compatible with the tree's ordering.
pub fn reorder_blocks(
    s: &StrategyTree,
    inst: &Instance,
    omega: &VariableOrder,
    pi: &VariableOrder,
) -> Result<StrategyTree, StrategyError> {
    if &s.order != omega {
        return Err(StrategyError::OrderMismatch);
    }
    validate_structure(inst, s)?;
    if !crate::ordering::is_block_compatible(inst, pi, omega) {
        return Err(StrategyError::NotBlockCompatible);
    }
    let scenarios: Vec<BTreeMap<VarId, ValueId>> = s
        .scenarios()
        .iter()
        .map(Scenario::assignment_set)
        .collect();
    rebuild_under(inst, &scenarios, pi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_instance;
    use crate::test_fixtures::{example1_instance, example2_delta, example2_instance};

    fn leaf(value: usize) -> StrategyNode {
        StrategyNode {
            value: ValueId(value),
            children: Vec::new(),
        }
    }

    fn node(value: usize, children: Vec<StrategyNode>) -> StrategyNode {
        StrategyNode {
            value: ValueId(value),
            children,
        }
    }

    /// The solved tree for example 2 under the prefix: x1=a1, then
    /// x2=b1 -> x3=c1 and x2=b2 -> x3=c2.
    fn example2_pi_tree() -> StrategyTree {
        StrategyTree {
            order: VariableOrder::identity(3),
            roots: vec![node(0, vec![node(0, vec![leaf(0)]), node(1, vec![leaf(1)])])],
        }
    }

    #[test]
    fn verify_example2_solution() {
        let inst = example2_instance();
        let tree = example2_pi_tree();
        assert!(verify_strategy(&inst, &tree).unwrap().is_valid());
        assert_eq!(tree.scenarios().len(), 2);
    }

    #[test]
    fn verify_reports_first_violated_pair() {
        let inst = example2_instance();
        // Right branch answers c1 against x2=b2: violates (x2, x3).
        let tree = StrategyTree {
            order: VariableOrder::identity(3),
            roots: vec![node(0, vec![node(0, vec![leaf(0)]), node(1, vec![leaf(0)])])],
        };
        match verify_strategy(&inst, &tree).unwrap() {
            StrategyVerdict::Inconsistent { pair, scenario } => {
                assert_eq!(pair, (VarId(1), VarId(2)));
                assert_eq!(scenario.assignments[1], (VarId(1), ValueId(1)));
            }
            StrategyVerdict::Valid => panic!("must fail"),
        }
    }

    #[test]
    fn verify_single_existential_no_constraints() {
        let inst = parse_instance("qcsp 1\nvar x E a b\n").unwrap();
        let tree = StrategyTree {
            order: VariableOrder::identity(1),
            roots: vec![leaf(1)],
        };
        assert!(verify_strategy(&inst, &tree).unwrap().is_valid());
    }

    #[test]
    fn structural_violations_are_errors_not_verdicts() {
        let inst = example2_instance();
        // Universal level with one child only.
        let tree = StrategyTree {
            order: VariableOrder::identity(3),
            roots: vec![node(0, vec![node(0, vec![leaf(0)])])],
        };
        assert!(matches!(
            verify_strategy(&inst, &tree),
            Err(StrategyError::Structural { .. })
        ));
    }

    #[test]
    fn build_solution_on_example2_under_delta() {
        let inst = example2_instance();
        let delta = example2_delta();
        let tree = build_solution(&inst, &delta, DEFAULT_MAX_STRATEGY_NODES).unwrap();
        assert!(verify_strategy(&inst, &tree).unwrap().is_valid());
        assert_eq!(tree.scenarios().len(), 2);
        // Levels: x2 fan, x3 forced, x1 = a1 on both paths.
        for sc in tree.scenarios() {
            assert_eq!(sc.assignments[2].0, VarId(0));
            assert_eq!(sc.assignments[2].1, ValueId(0));
        }
    }

    #[test]
    fn build_solution_trivial_shapes() {
        let inst = parse_instance("qcsp 2\nvar x1 A 0 1\nvar x2 E 0 1\n").unwrap();
        let tree = build_solution(&inst, inst.prefix(), DEFAULT_MAX_STRATEGY_NODES).unwrap();
        assert_eq!(tree.roots.len(), 2);
        assert!(tree.roots.iter().all(|r| r.children[0].value == ValueId(0)));

        let single = parse_instance("qcsp 1\nvar x E 5 7\n").unwrap();
        let tree = build_solution(&single, single.prefix(), DEFAULT_MAX_STRATEGY_NODES).unwrap();
        assert_eq!(tree.roots.len(), 1);
        assert_eq!(tree.roots[0].value, ValueId(0));
    }

    #[test]
    fn build_solution_size_guard() {
        let inst = parse_instance(
            "qcsp 3\nvar x1 A 0 1 2 3\nvar x2 A 0 1 2 3\nvar x3 A 0 1 2 3\n",
        )
        .unwrap();
        assert!(matches!(
            build_solution(&inst, inst.prefix(), 10),
            Err(StrategyError::TooLarge { .. })
        ));
    }

    /// A five-variable tree shaped like the running compatibility example:
    /// within each x1 subtree all x4 labels agree, but the left subtree
    /// carries two distinct x5 labels.
    fn example1_tree() -> StrategyTree {
        let left = node(
            0, // x2
            vec![
                node(0, vec![node(0, vec![leaf(0)])]), // x3=0, x4=0, x5=0
                node(1, vec![node(0, vec![leaf(1)])]), // x3=1, x4=0, x5=1
            ],
        );
        let right = node(
            1,
            vec![
                node(0, vec![node(1, vec![leaf(0)])]),
                node(1, vec![node(1, vec![leaf(0)])]),
            ],
        );
        StrategyTree {
            order: VariableOrder::identity(5),
            roots: vec![node(0, vec![left.clone()]), node(1, vec![right])],
        }
    }

    #[test]
    fn compatibility_example1() {
        let inst = example1_instance();
        let tree = example1_tree();
        let x1 = VarId(0);
        let (x4, x5) = (VarId(3), VarId(4));
        assert!(is_compatible(&tree, &inst, Some(x1), x4).unwrap());
        assert!(!is_compatible(&tree, &inst, Some(x1), x5).unwrap());
        // Root sentinel: x2 labels differ across the two x1 subtrees.
        assert!(!is_compatible(&tree, &inst, None, VarId(1)).unwrap());
        // Precondition violations are errors.
        assert!(is_compatible(&tree, &inst, Some(x1), VarId(2)).is_err());
        assert!(is_compatible(&tree, &inst, Some(x4), x5).is_err());
    }

    #[test]
    fn compatible_construction_example2() {
        let inst = example2_instance();
        let delta = example2_delta();
        let tree = build_compatible_solution(
            &inst,
            inst.prefix(),
            &delta,
            ValueRule::Qbtp,
            DEFAULT_MAX_STRATEGY_NODES,
        )
        .unwrap();
        assert!(verify_strategy(&inst, &tree).unwrap().is_valid());
        // Both x1 nodes carry a1 (the minimal support set is {a1}).
        for sc in tree.scenarios() {
            assert_eq!(sc.assignments[2], (VarId(0), ValueId(0)));
        }
        // Compatible with respect to the root sentinel.
        assert!(is_compatible(&tree, &inst, None, VarId(0)).unwrap());
    }

    #[test]
    fn compatible_construction_reduces_to_plain_when_orders_align() {
        let inst = example2_instance();
        let delta = example2_delta();
        let viewed = inst.with_prefix(delta.clone());
        let plain = build_solution(&viewed, &delta, DEFAULT_MAX_STRATEGY_NODES).unwrap();
        let compatible = build_compatible_solution(
            &viewed,
            &delta,
            &delta,
            ValueRule::Qbtp,
            DEFAULT_MAX_STRATEGY_NODES,
        )
        .unwrap();
        assert_eq!(plain, compatible);
    }

    #[test]
    fn shift_levels_example2_yields_prefix_solution() {
        let inst = example2_instance();
        let delta = example2_delta();
        let tree = build_compatible_solution(
            &inst,
            inst.prefix(),
            &delta,
            ValueRule::Qbtp,
            DEFAULT_MAX_STRATEGY_NODES,
        )
        .unwrap();
        let (shifted, omega) = shift_levels(&tree, &inst, inst.prefix(), &delta).unwrap();
        assert!(omega.is_identity());
        assert_eq!(shifted, example2_pi_tree());
        assert_eq!(tree.scenario_multiset(), shifted.scenario_multiset());
    }

    #[test]
    fn shift_levels_identity_when_delta_is_pi() {
        let inst = example2_instance();
        let tree = example2_pi_tree();
        let (shifted, omega) = shift_levels(&tree, &inst, inst.prefix(), inst.prefix()).unwrap();
        assert_eq!(omega, *inst.prefix());
        assert_eq!(shifted, tree);
    }

    #[test]
    fn shift_level_after_moves_x4_after_x1() {
        let inst = example1_instance();
        let tree = example1_tree();
        let x4 = VarId(3);
        let shifted = shift_level_after(&tree, &inst, x4, Some(VarId(0))).unwrap();
        let names: Vec<&str> = shifted.order.by_rank().map(|v| inst.name(v)).collect();
        assert_eq!(names, vec!["x1", "x4", "x2", "x3", "x5"]);
        assert_eq!(tree.scenario_multiset(), shifted.scenario_multiset());
        // Shifting x5 after x1 must fail: labels differ inside the left subtree.
        assert!(matches!(
            shift_level_after(&tree, &inst, VarId(4), Some(VarId(0))),
            Err(StrategyError::CompatibilityViolated { .. })
        ));
    }

    #[test]
    fn reorder_blocks_identity_and_swap() {
        let inst = parse_instance(
            "qcsp 3\nvar x1 A 0 1\nvar x2 E 0 1\nvar x3 E 0 1\ncon x1 x2 : 0,0 1,1\n",
        )
        .unwrap();
        let tree = build_solution(&inst, inst.prefix(), DEFAULT_MAX_STRATEGY_NODES).unwrap();
        let same = reorder_blocks(&tree, &inst, inst.prefix(), inst.prefix()).unwrap();
        assert_eq!(same, tree);

        // Swap x2 and x3 inside their block.
        let omega = VariableOrder::from_ranks(&[1, 3, 2]).unwrap();
        let viewed = inst.with_prefix(omega.clone());
        let swapped = build_solution(&viewed, &omega, DEFAULT_MAX_STRATEGY_NODES).unwrap();
        let back = reorder_blocks(&swapped, &inst, &omega, inst.prefix()).unwrap();
        assert_eq!(back.scenario_multiset(), swapped.scenario_multiset());
        assert!(verify_strategy(&inst, &back).unwrap().is_valid());

        // Non-block-compatible targets are rejected.
        let bad = VariableOrder::from_ranks(&[2, 1, 3]).unwrap();
        assert!(matches!(
            reorder_blocks(&tree, &inst, inst.prefix(), &bad),
            Err(StrategyError::NotBlockCompatible)
        ));
    }

    #[test]
    fn scenario_count_is_product_of_universal_domains() {
        let inst = parse_instance(
            "qcsp 4\nvar x1 A 0 1 2\nvar x2 E 0 1\nvar x3 A 0 1\nvar x4 E 0 1\n",
        )
        .unwrap();
        let tree = build_solution(&inst, inst.prefix(), DEFAULT_MAX_STRATEGY_NODES).unwrap();
        assert_eq!(tree.scenarios().len(), 6);
    }

    #[test]
    fn json_round_trip_example2() {
        let inst = example2_instance();
        let tree = example2_pi_tree();
        let json = tree.to_json(&inst);
        let back = StrategyTree::from_json(&inst, &json).unwrap();
        assert_eq!(back, tree);
    }
}
