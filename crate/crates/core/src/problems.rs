//! Ready-made forward problems used by the examples, the shipped configs and
//! the test-suites.

use nalgebra::{DMatrix, DVector};

use crate::model::{ForwardProblem, LinearSystem, PolytopicConstraints, QuadraticFeature};

/// Mass-spring-damper (m = 1, c = 0.2, d = 0.1), backward-Euler discretized at
/// Ts = 0.1; features `(x1 - 3)²`, `x2²` plus the input feature `u²`; bound
/// `u <= 0.7`; `N = 10`, `x0 = (1, 0.1)`, `θ = (10, 5, 7)`.
pub fn spring_damper() -> ForwardProblem {
    // (I - Ts Ac)^-1 = [[1.01, 0.1], [-0.02, 1]] / 1.012
    let det = 1.012;
    let a = DMatrix::from_row_slice(2, 2, &[1.01 / det, 0.1 / det, -0.02 / det, 1.0 / det]);
    let b = DMatrix::from_row_slice(2, 1, &[0.01 / det, 0.1 / det]);
    let sys = LinearSystem::new(a, b).expect("static dimensions");
    ForwardProblem::new(
        sys,
        vec![QuadraticFeature::state(0, 3.0), QuadraticFeature::state(1, 0.0)],
        PolytopicConstraints::input_upper(2, 1, 0, 0.7),
        10,
        DVector::from_vec(vec![1.0, 0.1]),
    )
    .and_then(|fp| fp.with_input_features().with_theta_true(DVector::from_vec(vec![10.0, 5.0, 7.0])))
    .expect("static problem is valid")
}

/// Linear two-compartment surrogate with a nonnegative input: `x1` is an
/// excess concentration cleared by the action `x2`, which the input drives.
/// Backward-Euler at Ts = 1 of `x1' = -0.1 x1 - x2`, `x2' = -0.5 x2 + u`;
/// features `x1²`, `x2²`, `u²`; bound `u >= 0`; `N = 20`, `x0 = (3, 0)`,
/// `θ = (1, 0.1, 10)`.
pub fn positivity_surrogate() -> ForwardProblem {
    let ac = DMatrix::from_row_slice(2, 2, &[-0.1, -1.0, 0.0, -0.5]);
    let bc = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let inv = (DMatrix::<f64>::identity(2, 2) - ac)
        .try_inverse()
        .expect("backward Euler matrix is invertible");
    let sys = LinearSystem::new(inv.clone(), inv * bc).expect("static dimensions");
    let cons = PolytopicConstraints {
        hx: DMatrix::zeros(1, 2),
        hu: DMatrix::from_element(1, 1, -1.0),
        h: DVector::zeros(1),
    };
    ForwardProblem::new(
        sys,
        vec![QuadraticFeature::state(0, 0.0), QuadraticFeature::state(1, 0.0)],
        cons,
        20,
        DVector::from_vec(vec![3.0, 0.0]),
    )
    .and_then(|fp| fp.with_input_features().with_theta_true(DVector::from_vec(vec![1.0, 0.1, 10.0])))
    .expect("static problem is valid")
}
