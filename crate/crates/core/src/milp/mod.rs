//! Linear and mixed-binary programming.

mod bnb;
mod lp;
mod lp_format;
mod simplex;

pub use bnb::{
    solve_milp, BranchAndBound, Heuristic, MilpInstance, MilpLimits, MilpSolution, MilpStatus,
    SearchStats,
};
pub use lp::{solve_lp, Constraint, LpInstance, LpSolution, LpStatus, Relation, Sense};
pub use lp_format::to_lp_string;
