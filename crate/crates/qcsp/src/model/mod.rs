//! Binary QCSP instances: variables with a quantifier prefix, finite ordered
//! domains, and binary relations stored as bit matrices.
//!
//! Instances are immutable after construction; every operation here is a pure
//! read, so instances can be shared freely across threads.

mod generate;
mod parse;

pub use generate::{generate_instance, EnsureClass, GenParams};
pub use parse::{parse_instance, serialize_instance};

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::bitset::BitSet;

/// Index of a variable in declaration order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct VarId(pub usize);

/// Index of a value in its variable's (totally ordered) domain.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ValueId(pub usize);

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Quantifier {
    Exists,
    Forall,
}

impl std::fmt::Display for Quantifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Quantifier::Exists => write!(f, "E"),
            Quantifier::Forall => write!(f, "A"),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Variable {
    pub name: String,
    pub quantifier: Quantifier,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: duplicate variable '{name}'")]
    DuplicateVariable { line: usize, name: String },
    #[error("line {line}: duplicate value '{value}' in domain of '{var}'")]
    DuplicateValue { line: usize, var: String, value: String },
    #[error("line {line}: duplicate constraint on pair ({a}, {b})")]
    DuplicateConstraint { line: usize, a: String, b: String },
    #[error("line {line}: unknown variable '{name}'")]
    UnknownVariable { line: usize, name: String },
    #[error("line {line}: value '{value}' not in domain of '{var}'")]
    OutOfDomainValue { line: usize, var: String, value: String },
    #[error("line {line}: constraint scope must name two distinct variables")]
    BadArity { line: usize },
    #[error("declared {declared} variables but found {found} 'var' lines")]
    VarCountMismatch { declared: usize, found: usize },
    #[error("value index {value} out of domain of '{var}'")]
    OutOfDomain { var: String, value: usize },
    #[error("invalid quantifier pattern '{pattern}'")]
    InvalidPattern { pattern: String },
    #[error("generation attempt cap exceeded after {attempts} attempts")]
    GenerationCapExceeded { attempts: u32 },
    #[error("invalid ordering: {reason}")]
    InvalidOrdering { reason: String },
}

/// A bijection between variables and positions `1..=n`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct VariableOrder {
    rank_of: Vec<usize>,
    var_at: Vec<VarId>,
}

impl VariableOrder {
    pub fn identity(n: usize) -> Self {
        VariableOrder {
            rank_of: (1..=n).collect(),
            var_at: (0..n).map(VarId).collect(),
        }
    }

    /// Builds an ordering from the variable sequence by rank.
    pub fn from_sequence(seq: Vec<VarId>) -> Result<Self, ModelError> {
        let n = seq.len();
        let mut rank_of = vec![0usize; n];
        for (pos, &VarId(v)) in seq.iter().enumerate() {
            if v >= n {
                return Err(ModelError::InvalidOrdering {
                    reason: format!("variable index {v} out of range"),
                });
            }
            if rank_of[v] != 0 {
                return Err(ModelError::InvalidOrdering {
                    reason: format!("variable index {v} appears twice"),
                });
            }
            rank_of[v] = pos + 1;
        }
        Ok(VariableOrder {
            rank_of,
            var_at: seq,
        })
    }

    /// Builds an ordering from per-variable ranks (1-based).
    pub fn from_ranks(ranks: &[usize]) -> Result<Self, ModelError> {
        let n = ranks.len();
        let mut var_at = vec![VarId(usize::MAX); n];
        for (v, &r) in ranks.iter().enumerate() {
            if r == 0 || r > n {
                return Err(ModelError::InvalidOrdering {
                    reason: format!("rank {r} out of range"),
                });
            }
            if var_at[r - 1] != VarId(usize::MAX) {
                return Err(ModelError::InvalidOrdering {
                    reason: format!("rank {r} assigned twice"),
                });
            }
            var_at[r - 1] = VarId(v);
        }
        Ok(VariableOrder {
            rank_of: ranks.to_vec(),
            var_at,
        })
    }

    pub fn len(&self) -> usize {
        self.var_at.len()
    }

    pub fn is_empty(&self) -> bool {
        self.var_at.is_empty()
    }

    /// 1-based rank of a variable.
    pub fn rank(&self, v: VarId) -> usize {
        self.rank_of[v.0]
    }

    /// Variable at a 1-based rank.
    pub fn var_at(&self, rank: usize) -> VarId {
        self.var_at[rank - 1]
    }

    /// Variables in rank order.
    pub fn by_rank(&self) -> impl Iterator<Item = VarId> + '_ {
        self.var_at.iter().copied()
    }

    pub fn is_identity(&self) -> bool {
        self.var_at.iter().enumerate().all(|(i, &VarId(v))| i == v)
    }
}

/// A binary relation between two variables, stored row-wise and column-wise
/// so that support queries in either scope order are transpose-consistent
/// bit-for-bit.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Relation {
    rows: Vec<BitSet>,
    cols: Vec<BitSet>,
}

impl Relation {
    pub fn from_pairs(n_rows: usize, n_cols: usize, pairs: &[(usize, usize)]) -> Self {
        let mut rows = vec![BitSet::empty(n_cols); n_rows];
        let mut cols = vec![BitSet::empty(n_rows); n_cols];
        for &(a, b) in pairs {
            rows[a].insert(b);
            cols[b].insert(a);
        }
        Relation { rows, cols }
    }

    pub fn complete(n_rows: usize, n_cols: usize) -> Self {
        Relation {
            rows: vec![BitSet::full(n_cols); n_rows],
            cols: vec![BitSet::full(n_rows); n_cols],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn allows(&self, a: usize, b: usize) -> bool {
        self.rows[a].contains(b)
    }

    pub fn row(&self, a: usize) -> &BitSet {
        &self.rows[a]
    }

    pub fn col(&self, b: usize) -> &BitSet {
        &self.cols[b]
    }

    pub fn is_complete(&self) -> bool {
        self.rows.iter().all(|r| r.is_full())
    }

    pub fn tuple_count(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    /// Restricts both sides to the surviving values, reindexing densely.
    /// `keep_rows`/`keep_cols` list surviving old indices in ascending order.
    fn restrict(&self, keep_rows: &[usize], keep_cols: &[usize]) -> Relation {
        let pairs: Vec<(usize, usize)> = keep_rows
            .iter()
            .enumerate()
            .flat_map(|(new_a, &old_a)| {
                keep_cols
                    .iter()
                    .enumerate()
                    .filter(move |&(_, &old_b)| self.allows(old_a, old_b))
                    .map(move |(new_b, _)| (new_a, new_b))
            })
            .collect();
        Relation::from_pairs(keep_rows.len(), keep_cols.len(), &pairs)
    }
}

/// Support sets seen through an oriented (possibly absent) relation.
/// An absent constraint behaves as the complete relation.
#[derive(Clone, Copy)]
pub struct RelView<'a> {
    rel: Option<&'a Relation>,
    transposed: bool,
    target_size: usize,
}

impl<'a> RelView<'a> {
    /// Values of the target variable supporting value `a` of the source.
    pub fn support(&self, a: usize) -> SupportSet<'a> {
        match self.rel {
            None => SupportSet::Full(self.target_size),
            Some(rel) if self.transposed => SupportSet::Bits(rel.col(a)),
            Some(rel) => SupportSet::Bits(rel.row(a)),
        }
    }

    pub fn allows(&self, a: usize, b: usize) -> bool {
        match self.rel {
            None => true,
            Some(rel) if self.transposed => rel.allows(b, a),
            Some(rel) => rel.allows(a, b),
        }
    }

    pub fn is_constrained(&self) -> bool {
        self.rel.is_some()
    }
}

/// A borrowed or implicit-complete support set.
#[derive(Clone, Copy)]
pub enum SupportSet<'a> {
    Bits(&'a BitSet),
    Full(usize),
}

impl SupportSet<'_> {
    pub fn contains(&self, i: usize) -> bool {
        match self {
            SupportSet::Bits(b) => b.contains(i),
            SupportSet::Full(n) => i < *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            SupportSet::Bits(b) => b.is_empty(),
            SupportSet::Full(n) => *n == 0,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SupportSet::Bits(b) => b.len(),
            SupportSet::Full(n) => *n,
        }
    }

    pub fn min(&self) -> Option<usize> {
        match self {
            SupportSet::Bits(b) => b.min(),
            SupportSet::Full(0) => None,
            SupportSet::Full(_) => Some(0),
        }
    }

    pub fn max(&self) -> Option<usize> {
        match self {
            SupportSet::Bits(b) => b.max(),
            SupportSet::Full(0) => None,
            SupportSet::Full(n) => Some(n - 1),
        }
    }

    pub fn is_subset_of(&self, other: &SupportSet<'_>) -> bool {
        match (self, other) {
            (SupportSet::Bits(a), SupportSet::Bits(b)) => a.is_subset_of(b),
            (_, SupportSet::Full(_)) => true,
            (SupportSet::Full(n), SupportSet::Bits(b)) => b.len() == *n,
        }
    }

    pub fn to_bitset(&self) -> BitSet {
        match self {
            SupportSet::Bits(b) => (*b).clone(),
            SupportSet::Full(n) => BitSet::full(*n),
        }
    }
}

/// A binary QCSP: quantified variables, a prefix order, ordered domains, and
/// one relation per constrained pair. An absent pair means the complete
/// relation.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Instance {
    vars: Vec<Variable>,
    prefix: VariableOrder,
    domains: Vec<Vec<String>>,
    constraints: BTreeMap<(VarId, VarId), Relation>,
}

impl Instance {
    /// Builds an instance with the identity prefix (declaration order).
    /// Constraint keys must be canonical: first index below second.
    pub fn new(
        vars: Vec<Variable>,
        domains: Vec<Vec<String>>,
        constraints: BTreeMap<(VarId, VarId), Relation>,
    ) -> Result<Self, ModelError> {
        assert_eq!(vars.len(), domains.len());
        let n = vars.len();
        for (&(a, b), rel) in &constraints {
            assert!(a < b && b.0 < n, "constraint key not canonical");
            assert_eq!(rel.n_rows(), domains[a.0].len());
            assert_eq!(rel.n_cols(), domains[b.0].len());
        }
        Ok(Instance {
            prefix: VariableOrder::identity(n),
            vars,
            domains,
            constraints,
        })
    }

    pub fn n(&self) -> usize {
        self.vars.len()
    }

    /// Maximum domain size.
    pub fn d(&self) -> usize {
        self.domains.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Number of explicit constraints.
    pub fn e(&self) -> usize {
        self.constraints.len()
    }

    pub fn var(&self, v: VarId) -> &Variable {
        &self.vars[v.0]
    }

    pub fn var_ids(&self) -> impl Iterator<Item = VarId> {
        (0..self.vars.len()).map(VarId)
    }

    pub fn quantifier(&self, v: VarId) -> Quantifier {
        self.vars[v.0].quantifier
    }

    pub fn is_existential(&self, v: VarId) -> bool {
        self.quantifier(v) == Quantifier::Exists
    }

    pub fn is_universal(&self, v: VarId) -> bool {
        self.quantifier(v) == Quantifier::Forall
    }

    pub fn name(&self, v: VarId) -> &str {
        &self.vars[v.0].name
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.vars
            .iter()
            .position(|v| v.name == name)
            .map(VarId)
    }

    pub fn prefix(&self) -> &VariableOrder {
        &self.prefix
    }

    pub fn domain_size(&self, v: VarId) -> usize {
        self.domains[v.0].len()
    }

    pub fn domain(&self, v: VarId) -> &[String] {
        &self.domains[v.0]
    }

    pub fn value_name(&self, v: VarId, val: ValueId) -> &str {
        &self.domains[v.0][val.0]
    }

    pub fn value_by_name(&self, v: VarId, name: &str) -> Option<ValueId> {
        self.domains[v.0]
            .iter()
            .position(|x| x == name)
            .map(ValueId)
    }

    pub fn constraints(&self) -> impl Iterator<Item = (VarId, VarId, &Relation)> {
        self.constraints.iter().map(|(&(a, b), r)| (a, b, r))
    }

    /// The relation on the canonical (ascending-index) pair, if constrained.
    pub fn constraint(&self, a: VarId, b: VarId) -> Option<&Relation> {
        let key = if a < b { (a, b) } else { (b, a) };
        self.constraints.get(&key)
    }

    /// Oriented view from `a` toward `b`; absent pairs act complete.
    pub fn rel_view(&self, a: VarId, b: VarId) -> RelView<'_> {
        debug_assert_ne!(a, b);
        let key = if a < b { (a, b) } else { (b, a) };
        RelView {
            rel: self.constraints.get(&key),
            transposed: a > b,
            target_size: self.domain_size(b),
        }
    }

    /// Support set `R_ij(alpha)`: values of `xj` compatible with `alpha` at
    /// `xi`. The full domain of `xj` when the pair is unconstrained.
    pub fn supports(&self, xi: VarId, xj: VarId, alpha: ValueId) -> Result<BitSet, ModelError> {
        if alpha.0 >= self.domain_size(xi) {
            return Err(ModelError::OutOfDomain {
                var: self.name(xi).to_string(),
                value: alpha.0,
            });
        }
        Ok(self.rel_view(xi, xj).support(alpha.0).to_bitset())
    }

    /// Same instance viewed under a different prefix order.
    pub fn with_prefix(&self, prefix: VariableOrder) -> Instance {
        assert_eq!(prefix.len(), self.n());
        Instance {
            vars: self.vars.clone(),
            prefix,
            domains: self.domains.clone(),
            constraints: self.constraints.clone(),
        }
    }

    /// Rebuilds the instance keeping only the listed values per variable.
    /// Value order (hence the domain total order) is preserved.
    pub fn restrict(&self, keep: &[BitSet]) -> Instance {
        assert_eq!(keep.len(), self.n());
        let kept: Vec<Vec<usize>> = keep.iter().map(|k| k.iter().collect()).collect();
        let domains: Vec<Vec<String>> = kept
            .iter()
            .enumerate()
            .map(|(v, ks)| ks.iter().map(|&i| self.domains[v][i].clone()).collect())
            .collect();
        let constraints = self
            .constraints
            .iter()
            .map(|(&(a, b), rel)| ((a, b), rel.restrict(&kept[a.0], &kept[b.0])))
            .collect();
        Instance {
            vars: self.vars.clone(),
            prefix: self.prefix.clone(),
            domains,
            constraints,
        }
    }
}

/// The prefix-derived variable sets around one variable under one ordering.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct VariableSets {
    /// Maximal same-quantifier run containing the variable.
    pub block: BTreeSet<VarId>,
    /// Universals strictly before, excluding block members.
    pub pre_forall: BTreeSet<VarId>,
    /// Existentials strictly before, excluding block members.
    pub pre_exists: BTreeSet<VarId>,
    /// Universals strictly after, excluding block members.
    pub suc_forall: BTreeSet<VarId>,
    /// Existentials strictly after, excluding block members.
    pub suc_exists: BTreeSet<VarId>,
    /// All variables strictly after (block members included).
    pub suc: BTreeSet<VarId>,
    /// Closest universal strictly before; `None` stands for the root
    /// sentinel, never rank 0 of the ordering.
    pub closest_universal: Option<VarId>,
}

/// Computes the block, pre/suc sets, and closest preceding universal for `v`
/// under `ord`.
pub fn variable_sets(inst: &Instance, ord: &VariableOrder, v: VarId) -> VariableSets {
    let q = inst.quantifier(v);
    let r = ord.rank(v);
    let n = inst.n();

    let mut block = BTreeSet::new();
    block.insert(v);
    let mut lo = r;
    while lo > 1 && inst.quantifier(ord.var_at(lo - 1)) == q {
        lo -= 1;
        block.insert(ord.var_at(lo));
    }
    let mut hi = r;
    while hi < n && inst.quantifier(ord.var_at(hi + 1)) == q {
        hi += 1;
        block.insert(ord.var_at(hi));
    }

    let mut sets = VariableSets {
        block,
        pre_forall: BTreeSet::new(),
        pre_exists: BTreeSet::new(),
        suc_forall: BTreeSet::new(),
        suc_exists: BTreeSet::new(),
        suc: BTreeSet::new(),
        closest_universal: None,
    };

    for rank in 1..=n {
        let u = ord.var_at(rank);
        if u == v {
            continue;
        }
        if rank > r {
            sets.suc.insert(u);
        }
        if sets.block.contains(&u) {
            continue;
        }
        match (rank < r, inst.quantifier(u)) {
            (true, Quantifier::Forall) => {
                sets.pre_forall.insert(u);
            }
            (true, Quantifier::Exists) => {
                sets.pre_exists.insert(u);
            }
            (false, Quantifier::Forall) => {
                sets.suc_forall.insert(u);
            }
            (false, Quantifier::Exists) => {
                sets.suc_exists.insert(u);
            }
        }
    }

    sets.closest_universal = sets
        .pre_forall
        .iter()
        .copied()
        .max_by_key(|&u| ord.rank(u));
    sets
}

/// Closest universal strictly before `v` under `ord`, block members excluded;
/// `None` is the root sentinel.
pub fn closest_universal(inst: &Instance, ord: &VariableOrder, v: VarId) -> Option<VarId> {
    variable_sets(inst, ord, v).closest_universal
}
