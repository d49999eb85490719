//! Dense linear algebra and the convex QP solver shared by every estimator.

mod linalg;
mod qp;

pub use linalg::{
    cholesky, cholesky_regularized, psd_factor, solve_lower, solve_spd, solve_upper_transpose,
    spd_inverse, symmetrize,
};
pub use qp::{solve_qp, Qp, QpSolution, QpStatus, ACTIVE_TOL};
