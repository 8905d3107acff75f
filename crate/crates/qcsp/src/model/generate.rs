//! Seeded random instance generation, with optional rejection sampling into
//! a target class.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Instance, ModelError, Quantifier, Relation, VarId, Variable};

/// Class the generator must certify before returning an instance.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum EnsureClass {
    /// Broken-triangle property holds under the prefix order.
    Qbtp,
    /// Quantified arc consistent and min-of-max extendable under the prefix.
    Qmme,
}

impl std::str::FromStr for EnsureClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "qbtp" => Ok(EnsureClass::Qbtp),
            "qmme" => Ok(EnsureClass::Qmme),
            other => Err(format!("unknown class '{other}' (expected qbtp or qmme)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GenParams {
    pub n: usize,
    pub d: usize,
    /// Quantifier pattern over {E, A}; cycled when shorter than `n`.
    pub pattern: String,
    /// Probability that an unordered pair is constrained.
    pub density: f64,
    /// Probability that a matrix cell of a constrained pair is allowed.
    pub tuple_density: f64,
    pub seed: u64,
    pub ensure: Option<EnsureClass>,
    pub max_attempts: u32,
}

impl GenParams {
    pub fn new(n: usize, d: usize, pattern: &str, density: f64, tuple_density: f64, seed: u64) -> Self {
        GenParams {
            n,
            d,
            pattern: pattern.to_string(),
            density,
            tuple_density,
            seed,
            ensure: None,
            max_attempts: 10_000,
        }
    }

    pub fn ensure(mut self, class: EnsureClass) -> Self {
        self.ensure = Some(class);
        self
    }
}

fn quantifiers(params: &GenParams) -> Result<Vec<Quantifier>, ModelError> {
    let pat: Vec<Quantifier> = params
        .pattern
        .chars()
        .map(|c| match c {
            'E' => Ok(Quantifier::Exists),
            'A' => Ok(Quantifier::Forall),
            _ => Err(ModelError::InvalidPattern {
                pattern: params.pattern.clone(),
            }),
        })
        .collect::<Result<_, _>>()?;
    if pat.is_empty() {
        return Err(ModelError::InvalidPattern {
            pattern: params.pattern.clone(),
        });
    }
    Ok((0..params.n).map(|i| pat[i % pat.len()]).collect())
}

fn sample(params: &GenParams, quants: &[Quantifier], rng: &mut ChaCha8Rng) -> Instance {
    let vars: Vec<Variable> = quants
        .iter()
        .enumerate()
        .map(|(i, &q)| Variable {
            name: format!("x{}", i + 1),
            quantifier: q,
        })
        .collect();
    let domains: Vec<Vec<String>> = (0..params.n)
        .map(|_| (1..=params.d).map(|v| format!("v{v}")).collect())
        .collect();
    let mut constraints = BTreeMap::new();
    for a in 0..params.n {
        for b in a + 1..params.n {
            if rng.gen_bool(params.density) {
                let mut pairs = Vec::new();
                for i in 0..params.d {
                    for j in 0..params.d {
                        if rng.gen_bool(params.tuple_density) {
                            pairs.push((i, j));
                        }
                    }
                }
                constraints.insert(
                    (VarId(a), VarId(b)),
                    Relation::from_pairs(params.d, params.d, &pairs),
                );
            }
        }
    }
    Instance::new(vars, domains, constraints).expect("generated instance is well-formed")
}

/// Deterministic for a fixed seed. With `ensure` set, rejection-samples until
/// the candidate certifiably belongs to the class or the attempt cap hits.
pub fn generate_instance(params: &GenParams) -> Result<Instance, ModelError> {
    if params.n < 1 || params.d < 1 {
        return Err(ModelError::InvalidPattern {
            pattern: "n and d must be at least 1".into(),
        });
    }
    assert!((0.0..=1.0).contains(&params.density));
    assert!((0.0..=1.0).contains(&params.tuple_density));
    let quants = quantifiers(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let attempts = if params.ensure.is_some() {
        params.max_attempts.max(1)
    } else {
        1
    };
    for _ in 0..attempts {
        let inst = sample(params, &quants, &mut rng);
        let ok = match params.ensure {
            None => true,
            Some(EnsureClass::Qbtp) => {
                crate::patterns::qbtp_holds(&inst, inst.prefix()).holds()
            }
            Some(EnsureClass::Qmme) => {
                crate::consistency::is_qac(&inst).is_ok()
                    && crate::patterns::qmme_holds(&inst, inst.prefix()).holds()
            }
        };
        if ok {
            return Ok(inst);
        }
    }
    Err(ModelError::GenerationCapExceeded {
        attempts: params.max_attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_instance, serialize_instance};

    #[test]
    fn round_trips_and_is_deterministic() {
        let params = GenParams::new(3, 2, "EAE", 1.0, 0.7, 7);
        let a = generate_instance(&params).unwrap();
        let b = generate_instance(&params).unwrap();
        assert_eq!(a, b);
        assert_eq!(parse_instance(&serialize_instance(&a)).unwrap(), a);
    }

    #[test]
    fn ensure_qbtp_postcondition() {
        let params = GenParams::new(6, 3, "EAE", 0.4, 0.7, 11).ensure(EnsureClass::Qbtp);
        let inst = generate_instance(&params).unwrap();
        assert!(crate::patterns::qbtp_holds(&inst, inst.prefix()).holds());
    }

    #[test]
    fn invalid_pattern_rejected() {
        let params = GenParams::new(3, 2, "EXE", 0.5, 0.5, 0);
        assert!(matches!(
            generate_instance(&params),
            Err(ModelError::InvalidPattern { .. })
        ));
    }

    #[test]
    fn cap_exceeded_reported() {
        // Density 1 with zero tuple density cannot satisfy QMME's QAC gate.
        let mut params = GenParams::new(4, 2, "E", 1.0, 0.0, 3).ensure(EnsureClass::Qmme);
        params.max_attempts = 5;
        assert!(matches!(
            generate_instance(&params),
            Err(ModelError::GenerationCapExceeded { attempts: 5 })
        ));
    }
}
