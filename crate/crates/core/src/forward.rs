//! The forward problem: the optimal input sequence for given weights.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{rollout, BilinearStationarity, ForwardProblem};
use crate::numerics::{solve_qp, Qp};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForwardSolution {
    #[serde(with = "crate::io::vector")]
    pub u: DVector<f64>,
    #[serde(with = "crate::io::vector")]
    pub lambda: DVector<f64>,
    /// Binding constraint indices `k·I + i`.
    pub active_set: Vec<usize>,
    pub objective: f64,
}

/// `Σ_{k<N} θᵀ φ(x_k, u_k)` along the rollout of `u`.
pub fn objective(fp: &ForwardProblem, theta: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    check_len("theta", fp.q(), theta.len())?;
    let states = rollout(&fp.system, &fp.x0, u, fp.horizon)?;
    let mut total = 0.0;
    for k in 0..fp.horizon {
        let uk = fp.input_at(u, k);
        for (f, t) in fp.features.iter().zip(theta.iter()) {
            total += t * f.eval(&states[k], &uk);
        }
    }
    Ok(total)
}

pub fn solve(fp: &ForwardProblem, theta: &DVector<f64>) -> Result<ForwardSolution> {
    let bs = BilinearStationarity::new(fp);
    let sol = solve_with(&bs, theta, None)?;
    let objective = objective(fp, theta, &sol.u)?;
    Ok(ForwardSolution { objective, ..sol })
}

/// Forward solve against a prebuilt stationarity decomposition. The returned
/// `objective` is the QP value, which differs from [`objective`] by a
/// constant.
pub fn solve_with(
    bs: &BilinearStationarity,
    theta: &DVector<f64>,
    warm_start: Option<&[usize]>,
) -> Result<ForwardSolution> {
    check_len("theta", bs.q(), theta.len())?;
    if theta.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Invalid("forward weights must be elementwise positive".into()));
    }
    let qp = Qp::new(bs.m_beta(theta), &bs.e_theta * theta)
        .with_inequalities(bs.j_lambda.transpose(), -&bs.g_offset);
    let sol = solve_qp(&qp, warm_start)?.ensure_optimal()?;
    Ok(ForwardSolution {
        objective: qp.objective(&sol.z),
        u: sol.z,
        lambda: sol.in_multipliers,
        active_set: sol.active_set,
    })
}
