//! Line-oriented text format for instances.
//!
//! ```text
//! qcsp <n>
//! var <name> <E|A> <value1> <value2> ...      # n lines, in prefix order
//! con <nameA> <nameB> : <vA,vB> <vA,vB> ...   # listed tuples are allowed
//! ```
//!
//! `#` starts a comment; declaration order of `var` lines defines the prefix
//! and value listing order defines the domain total order.

use std::collections::BTreeMap;

use super::{Instance, ModelError, Quantifier, Relation, VarId, Variable};

fn bad_name(tok: &str) -> bool {
    tok.is_empty() || tok.contains([',', ':', '#'])
}

pub fn parse_instance(text: &str) -> Result<Instance, ModelError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (header_no, header) = lines.next().ok_or(ModelError::Syntax {
        line: 1,
        message: "missing 'qcsp <n>' header".into(),
    })?;
    let mut toks = header.split_whitespace();
    let declared = match (toks.next(), toks.next(), toks.next()) {
        (Some("qcsp"), Some(n), None) => n.parse::<usize>().map_err(|_| ModelError::Syntax {
            line: header_no,
            message: format!("invalid variable count '{n}'"),
        })?,
        _ => {
            return Err(ModelError::Syntax {
                line: header_no,
                message: "expected 'qcsp <n>'".into(),
            })
        }
    };

    let mut vars: Vec<Variable> = Vec::new();
    let mut domains: Vec<Vec<String>> = Vec::new();
    let mut constraints: BTreeMap<(VarId, VarId), Relation> = BTreeMap::new();
    let mut pairs: BTreeMap<(VarId, VarId), Vec<(usize, usize)>> = BTreeMap::new();

    for (line_no, line) in lines {
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("var") => {
                if !constraints.is_empty() || !pairs.is_empty() {
                    return Err(ModelError::Syntax {
                        line: line_no,
                        message: "'var' line after 'con' lines".into(),
                    });
                }
                let name = toks.next().ok_or(ModelError::Syntax {
                    line: line_no,
                    message: "missing variable name".into(),
                })?;
                if bad_name(name) {
                    return Err(ModelError::Syntax {
                        line: line_no,
                        message: format!("invalid variable name '{name}'"),
                    });
                }
                if vars.iter().any(|v| v.name == name) {
                    return Err(ModelError::DuplicateVariable {
                        line: line_no,
                        name: name.into(),
                    });
                }
                let quantifier = match toks.next() {
                    Some("E") => Quantifier::Exists,
                    Some("A") => Quantifier::Forall,
                    other => {
                        return Err(ModelError::Syntax {
                            line: line_no,
                            message: format!("expected quantifier E or A, got {other:?}"),
                        })
                    }
                };
                let mut domain: Vec<String> = Vec::new();
                for val in toks {
                    if bad_name(val) {
                        return Err(ModelError::Syntax {
                            line: line_no,
                            message: format!("invalid value name '{val}'"),
                        });
                    }
                    if domain.iter().any(|d| d == val) {
                        return Err(ModelError::DuplicateValue {
                            line: line_no,
                            var: name.into(),
                            value: val.into(),
                        });
                    }
                    domain.push(val.into());
                }
                vars.push(Variable {
                    name: name.into(),
                    quantifier,
                });
                domains.push(domain);
            }
            Some("con") => {
                let rest = line.strip_prefix("con").unwrap();
                let (scope, tuples) = rest.split_once(':').ok_or(ModelError::Syntax {
                    line: line_no,
                    message: "missing ':' in constraint line".into(),
                })?;
                let names: Vec<&str> = scope.split_whitespace().collect();
                if names.len() != 2 || names[0] == names[1] {
                    return Err(ModelError::BadArity { line: line_no });
                }
                let mut ids = [VarId(0); 2];
                for (slot, n) in names.iter().enumerate() {
                    ids[slot] = vars
                        .iter()
                        .position(|v| v.name == *n)
                        .map(VarId)
                        .ok_or(ModelError::UnknownVariable {
                            line: line_no,
                            name: (*n).into(),
                        })?;
                }
                let (a, b, flip) = if ids[0] < ids[1] {
                    (ids[0], ids[1], false)
                } else {
                    (ids[1], ids[0], true)
                };
                if pairs.contains_key(&(a, b)) {
                    return Err(ModelError::DuplicateConstraint {
                        line: line_no,
                        a: vars[a.0].name.clone(),
                        b: vars[b.0].name.clone(),
                    });
                }
                let mut tuple_list: Vec<(usize, usize)> = Vec::new();
                for tup in tuples.split_whitespace() {
                    let (va, vb) = tup.split_once(',').ok_or(ModelError::Syntax {
                        line: line_no,
                        message: format!("expected '<v>,<v>' tuple, got '{tup}'"),
                    })?;
                    let (first, second) = if flip { (vb, va) } else { (va, vb) };
                    let ia = domains[a.0].iter().position(|d| d == first).ok_or(
                        ModelError::OutOfDomainValue {
                            line: line_no,
                            var: vars[a.0].name.clone(),
                            value: first.into(),
                        },
                    )?;
                    let ib = domains[b.0].iter().position(|d| d == second).ok_or(
                        ModelError::OutOfDomainValue {
                            line: line_no,
                            var: vars[b.0].name.clone(),
                            value: second.into(),
                        },
                    )?;
                    tuple_list.push((ia, ib));
                }
                pairs.insert((a, b), tuple_list);
            }
            Some(other) => {
                return Err(ModelError::Syntax {
                    line: line_no,
                    message: format!("unknown directive '{other}'"),
                })
            }
            None => unreachable!("blank lines filtered"),
        }
    }

    if vars.len() != declared {
        return Err(ModelError::VarCountMismatch {
            declared,
            found: vars.len(),
        });
    }
    for ((a, b), tuples) in pairs {
        constraints.insert(
            (a, b),
            Relation::from_pairs(domains[a.0].len(), domains[b.0].len(), &tuples),
        );
    }
    Instance::new(vars, domains, constraints)
}

/// Emits the text format: variables in prefix order, constraint lines sorted
/// by rank pair, tuples in row-major domain order.
pub fn serialize_instance(inst: &Instance) -> String {
    let mut out = String::new();
    out.push_str(&format!("qcsp {}\n", inst.n()));
    for v in inst.prefix().by_rank() {
        out.push_str(&format!("var {} {}", inst.name(v), inst.quantifier(v)));
        for val in inst.domain(v) {
            out.push(' ');
            out.push_str(val);
        }
        out.push('\n');
    }
    let mut cons: Vec<(VarId, VarId)> = inst.constraints().map(|(a, b, _)| (a, b)).collect();
    cons.sort_by_key(|&(a, b)| {
        let (ra, rb) = (inst.prefix().rank(a), inst.prefix().rank(b));
        (ra.min(rb), ra.max(rb))
    });
    for (a, b) in cons {
        let (first, second) = if inst.prefix().rank(a) < inst.prefix().rank(b) {
            (a, b)
        } else {
            (b, a)
        };
        out.push_str(&format!("con {} {} :", inst.name(first), inst.name(second)));
        let view = inst.rel_view(first, second);
        for i in 0..inst.domain_size(first) {
            for j in 0..inst.domain_size(second) {
                if view.allows(i, j) {
                    out.push_str(&format!(
                        " {},{}",
                        inst.domain(first)[i],
                        inst.domain(second)[j]
                    ));
                }
            }
        }
        out.push('\n');
    }
    out
}
