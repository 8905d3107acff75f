//! Tractable-class detection and strategy construction for binary quantified
//! constraint satisfaction problems.
//!
//! The library decides membership in a ladder of hybrid tractable classes —
//! the broken-triangle property under the prefix, block- and semi-compatible
//! reorderings certified by the broken-angle property, and the min-of-max
//! extendable variants — constructs explicit solution strategies for
//! instances inside them, and validates every polynomial-time component
//! against a brute-force oracle at desk scale.

pub mod bitset;
pub mod consistency;
pub mod model;
pub mod oracle;
pub mod ordering;
pub mod patterns;
pub mod pipeline;
pub mod strategy;

pub use bitset::BitSet;
pub use model::{
    closest_universal, generate_instance, parse_instance, serialize_instance, variable_sets,
    EnsureClass, GenParams, Instance, ModelError, Quantifier, Relation, ValueId, VarId,
    VariableOrder, VariableSets,
};
pub use pipeline::{classify, solve, ClassTag, SolveOptions, SolveResult, Verdict};

#[cfg(test)]
pub(crate) mod test_fixtures {
    use crate::model::{parse_instance, Instance, VariableOrder};

    /// The canonical three-variable fixture: an instance breaking the
    /// triangle property under its prefix but fixable by reordering.
    pub const EXAMPLE2_TEXT: &str = "\
qcsp 3
var x1 E a1 a2
var x2 A b1 b2
var x3 E c1 c2
con x1 x2 : a1,b1 a1,b2 a2,b1 a2,b2
con x1 x3 : a1,c1 a1,c2 a2,c2
con x2 x3 : b1,c1 b2,c2
";

    pub fn example2_instance() -> Instance {
        parse_instance(EXAMPLE2_TEXT).expect("fixture parses")
    }

    /// The reordering that repairs the fixture: x2, x3, x1.
    pub fn example2_delta() -> VariableOrder {
        VariableOrder::from_ranks(&[3, 1, 2]).expect("bijection")
    }

    /// Five variables, prefix A E A E E, all relations complete; enough for
    /// the block and compatibility examples.
    pub fn example1_instance() -> Instance {
        parse_instance(
            "qcsp 5\n\
             var x1 A 0 1\nvar x2 E 0 1\nvar x3 A 0 1\nvar x4 E 0 1\nvar x5 E 0 1\n",
        )
        .expect("fixture parses")
    }

    /// Proper 3-coloring of K4: arc consistent, unsatisfiable, and outside
    /// every class here (each triple breaks under every ordering).
    pub fn k4_coloring_text() -> String {
        let mut out = String::from("qcsp 4\n");
        for i in 1..=4 {
            out.push_str(&format!("var x{i} E r g b\n"));
        }
        for i in 1..=4 {
            for j in i + 1..=4 {
                out.push_str(&format!("con x{i} x{j} :"));
                for a in ["r", "g", "b"] {
                    for b in ["r", "g", "b"] {
                        if a != b {
                            out.push_str(&format!(" {a},{b}"));
                        }
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}
