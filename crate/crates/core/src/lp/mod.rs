//! Linear programming: a dense two-phase simplex and a transportation solver.

mod simplex;
mod transport;

pub use simplex::{
    solve_lp, Constraint, LpProblem, LpSolution, LpStatus, Relation, FEASIBILITY_TOL, OPTIMALITY_TOL,
};
pub use transport::{solve_transportation, transportation_lp, Transport};
