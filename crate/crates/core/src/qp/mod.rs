//! Convex quadratic programs of the form
//!
//! ```text
//! minimize   ½ zᵀ Q z + qᵀ z
//! subject to A z = b,  G z ≤ h
//! ```
//!
//! solved by a primal-dual interior-point method, and differentiated with
//! respect to parameters that enter `Q, q, A, b, G, h` through the KKT
//! implicit-function system.

mod ipm;
mod lp;
pub mod lu;
mod problem;
mod sensitivity;
pub mod sparse;

pub use ipm::{solve_qp, solve_qp_with};
pub use lp::{solve_lp, LpError, Polytope};
pub use problem::{
    QpError, QpProblem, QpResiduals, QpSettings, QpSolution, QpStatus,
};
pub use sensitivity::{
    differentiate_cost, differentiate_cost_with, solution_derivatives, AdjointGradient, CostGradient, DegenerateMode, ParamDerivative,
    ParamJacobians, SensitivityError, SensitivityOptions, SensitivityResult,
};
pub use sparse::{CscMatrix, Triplets};
