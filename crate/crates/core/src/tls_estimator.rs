//! Total-least-squares estimation: the smallest weighted corrections
//! `r_d = U_d - U` such that a single `U` satisfies the forward problem's
//! optimality conditions exactly, with `Σ_U` re-estimated from the corrections.
//!
//! Exact stationarity together with complementarity and feasibility are the
//! complete optimality conditions of the (strictly convex) forward problem, so
//! the corrected sequence is the forward solution `U*(θ)`. The inner problem
//! is therefore solved over `θ` alone by damped Gauss-Newton, with `dU*/dθ`
//! obtained by differentiating the optimality conditions on the current
//! active set.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::demos::{sample_mean, DemoSet};
use crate::error::{check_len, Error, Result};
use crate::forward::{self, ForwardSolution};
use crate::kkt_baseline::{kkt_single, NormalizationRule};
use crate::map_estimator::constrained_qp;
use crate::model::{split_beta, BilinearStationarity, ForwardProblem};
use crate::numerics::{solve_qp, spd_inverse, Qp, QpStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TlsConfig {
    pub max_outer_iters: usize,
    /// Frobenius change of `Σ_U` below which the outer loop stops.
    pub sigma_tol: f64,
    /// Added to the diagonal of every `Σ_U` estimate.
    pub ridge: f64,
    pub max_inner_iters: usize,
    /// Relative cost decrease below which the inner loop stops.
    pub cost_tol: f64,
    /// Lower bound on every weight, relative to the normalization value.
    pub min_weight: f64,
    pub norm: NormalizationRule,
}

impl Default for TlsConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 50,
            sigma_tol: 1e-6,
            ridge: 1e-8,
            max_inner_iters: 100,
            cost_tol: 1e-12,
            min_weight: 1e-3,
            norm: NormalizationRule::Sum { value: 1.0 },
        }
    }
}

impl TlsConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.sigma_tol, self.ridge, self.cost_tol, self.min_weight];
        if self.max_outer_iters == 0 || self.max_inner_iters == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Invalid("TLS iteration limits and tolerances must be positive".into()));
        }
        if self.min_weight >= 1.0 {
            return Err(Error::Invalid("min_weight must be below 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    /// Inner cost at the end of this outer iteration, under this iteration's `Σ_U`.
    pub cost: f64,
    /// Frobenius change of `Σ_U` that this iteration started from.
    pub sigma_delta: f64,
    /// Accepted inner costs, non-increasing.
    pub inner_costs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlsResult {
    #[serde(with = "crate::io::vector")]
    pub theta: DVector<f64>,
    #[serde(with = "crate::io::vector")]
    pub lambda: DVector<f64>,
    #[serde(with = "crate::io::vector")]
    pub u_hat: DVector<f64>,
    #[serde(with = "crate::io::matrix")]
    pub sigma_u_hat: DMatrix<f64>,
    /// `r_d = U_d - U_hat`.
    #[serde(with = "crate::io::vec_of_vectors")]
    pub residuals: Vec<DVector<f64>>,
    pub outer_trace: Vec<OuterRecord>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub u_hat: DVector<f64>,
    pub theta: DVector<f64>,
    pub lambda: DVector<f64>,
    pub cost: f64,
    pub cost_trace: Vec<f64>,
}

/// `Σ_d (U - U_d)ᵀ Σ_U⁻¹ (U - U_d)`.
pub fn tls_cost(u: &DVector<f64>, ds: &DemoSet, sigma_u_inv: &DMatrix<f64>) -> f64 {
    ds.demos
        .iter()
        .map(|d| {
            let r = d - u;
            r.dot(&(sigma_u_inv * &r))
        })
        .sum()
}

/// The `U` update for fixed `β`: minimizes `Σ_d (U - U_d)ᵀ Σ_U⁻¹ (U - U_d)`
/// subject to `M_β U + E_θ θ + J_λ λ = 0`, `g_i(U) = 0` where `λ_i > 0` and
/// `g_i(U) <= 0` elsewhere.
pub fn u_step(ds: &DemoSet, bs: &BilinearStationarity, beta: &DVector<f64>, sigma_u: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_len("beta", bs.n_beta(), beta.len())?;
    let (theta, lambda) = split_beta(beta, bs.q());
    let w = spd_inverse(sigma_u)?;
    let d = ds.len() as f64;
    let demo_sum = ds.demos.iter().fold(DVector::zeros(bs.n_inputs()), |a, x| a + x);
    let base = constrained_qp(&w * (2.0 * d), -(&w * demo_sum) * 2.0, bs, &lambda);
    let mb = bs.m_beta(&theta);
    let mut a_eq = DMatrix::zeros(base.a_eq.nrows() + mb.nrows(), bs.n_inputs());
    a_eq.rows_mut(0, base.a_eq.nrows()).copy_from(&base.a_eq);
    a_eq.rows_mut(base.a_eq.nrows(), mb.nrows()).copy_from(&mb);
    let mut b_eq = DVector::zeros(a_eq.nrows());
    b_eq.rows_mut(0, base.b_eq.len()).copy_from(&base.b_eq);
    b_eq.rows_mut(base.b_eq.len(), mb.nrows())
        .copy_from(&-bs.offset(&theta, &lambda));
    let qp = Qp {
        a_eq,
        b_eq,
        ..base
    };
    let sol = solve_qp(&qp, None)?;
    match sol.status {
        QpStatus::Optimal => Ok(sol.z),
        _ => Err(Error::Infeasible(
            "no input sequence satisfies stationarity at the given parameters".into(),
        )),
    }
}

/// Sensitivity `dU*/dθ` of the forward solution on its active set.
fn sensitivity(bs: &BilinearStationarity, theta: &DVector<f64>, sol: &ForwardSolution) -> Result<DMatrix<f64>> {
    let nu = bs.n_inputs();
    let g = bs.j_lambda.transpose();
    let active: Vec<usize> = sol
        .active_set
        .iter()
        .copied()
        .filter(|&i| g.row(i).amax() > 0.0)
        .collect();
    let na = active.len();
    let ga = g.select_rows(&active);
    let mut k = DMatrix::zeros(nu + na, nu + na);
    k.view_mut((0, 0), (nu, nu)).copy_from(&bs.m_beta(theta));
    k.view_mut((0, nu), (nu, na)).copy_from(&ga.transpose());
    k.view_mut((nu, 0), (na, nu)).copy_from(&ga);
    let mut rhs = DMatrix::zeros(nu + na, bs.q());
    rhs.view_mut((0, 0), (nu, bs.q()))
        .copy_from(&-bs.feature_jacobian(&sol.u));
    let x = match k.clone().lu().solve(&rhs) {
        Some(x) if x.iter().all(|v| v.is_finite()) => x,
        _ => k
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::Invalid(e.to_string()))?,
    };
    Ok(x.rows(0, nu).into_owned())
}

fn lower_bounds(norm: &NormalizationRule, q: usize, min_weight: f64) -> Result<(DVector<f64>, DVector<f64>, f64)> {
    let (row, value) = norm.row(q)?;
    Ok((row, DVector::from_element(q, min_weight * value), value))
}

/// Projects a starting guess onto the normalization with every weight at
/// least the lower bound.
fn admissible_start(theta: &DVector<f64>, norm: &NormalizationRule, min_weight: f64) -> Result<DVector<f64>> {
    let q = theta.len();
    let (row, lb, value) = lower_bounds(norm, q, min_weight)?;
    let guess = theta.map(|t| t.max(0.0));
    let guess = if row.dot(&guess) > 0.0 {
        norm.apply(&guess)?
    } else {
        DVector::from_element(q, value / row.sum())
    };
    // closest admissible point in the Euclidean sense
    let qp = Qp::new(DMatrix::identity(q, q) * 2.0, -&guess * 2.0)
        .with_equalities(DMatrix::from_row_slice(1, q, row.as_slice()), DVector::from_element(1, value))
        .with_inequalities(-DMatrix::identity(q, q), -lb);
    Ok(solve_qp(&qp, None)?.ensure_optimal()?.z)
}

/// Minimizes `Σ_d (U - U_d)ᵀ Σ_U⁻¹ (U - U_d)` over sequences that satisfy the
/// forward optimality conditions for some normalized `θ`. `init_beta`
/// supplies the starting weights (its multipliers are recomputed).
pub fn tls_inner(
    ds: &DemoSet,
    fp: &ForwardProblem,
    sigma_u: &DMatrix<f64>,
    cfg: &TlsConfig,
    init_beta: &DVector<f64>,
) -> Result<InnerSolution> {
    cfg.validate()?;
    ds.validate_for(fp)?;
    let bs = BilinearStationarity::new(fp);
    check_len("initial beta", bs.n_beta(), init_beta.len())?;
    inner(ds, &bs, sigma_u, cfg, &init_beta.rows(0, bs.q()).into_owned())
}

fn inner(
    ds: &DemoSet,
    bs: &BilinearStationarity,
    sigma_u: &DMatrix<f64>,
    cfg: &TlsConfig,
    theta0: &DVector<f64>,
) -> Result<InnerSolution> {
    let q = bs.q();
    let w = spd_inverse(sigma_u)?;
    let d = ds.len() as f64;
    let mean = sample_mean(ds);
    let (row, lb, _) = lower_bounds(&cfg.norm, q, cfg.min_weight)?;

    let mut theta = admissible_start(theta0, &cfg.norm, cfg.min_weight)?;
    let mut sol = forward::solve_with(bs, &theta, None)?;
    let mut cost = tls_cost(&sol.u, ds, &w);
    let mut trace = vec![cost];
    let mut damping = 1e-3;
    for _ in 0..cfg.max_inner_iters {
        let s = sensitivity(bs, &theta, &sol)?;
        // every input pinned by the active set: U* is locally constant in θ
        if (&s * DMatrix::from_diagonal(&theta)).amax() <= 1e-10 * (1.0 + sol.u.amax()) {
            break;
        }
        let st_w = s.transpose() * &w * d;
        let h = &st_w * &s;
        let grad = &st_w * (&sol.u - &mean);
        let scale = h.diagonal().map(|v| v.max(1e-12 * h.diagonal().amax()).max(f64::MIN_POSITIVE));
        let mut improved = None;
        for _ in 0..16 {
            let damp = DMatrix::from_diagonal(&(&scale * damping));
            let qp = Qp::new((&h + damp) * 2.0, &grad * 2.0)
                .with_equalities(DMatrix::from_row_slice(1, q, row.as_slice()), DVector::zeros(1))
                .with_inequalities(-DMatrix::identity(q, q), &theta - &lb);
            let step = solve_qp(&qp, None)?.ensure_optimal()?.z;
            let cand = (&theta + step).zip_map(&lb, |t, l| t.max(l));
            let cand_sol = forward::solve_with(bs, &cand, Some(&sol.active_set))?;
            let cand_cost = tls_cost(&cand_sol.u, ds, &w);
            if cand_cost < cost {
                damping = (damping * 0.3).max(1e-12);
                improved = Some((cand, cand_sol, cand_cost));
                break;
            }
            damping *= 10.0;
        }
        let Some((t, s_new, c_new)) = improved else {
            break;
        };
        let rel = (cost - c_new) / cost.max(f64::MIN_POSITIVE);
        theta = t;
        sol = s_new;
        cost = c_new;
        trace.push(cost);
        if rel < cfg.cost_tol {
            break;
        }
    }
    Ok(InnerSolution {
        u_hat: sol.u,
        theta,
        lambda: sol.lambda,
        cost,
        cost_trace: trace,
    })
}

/// `(1/D) Σ_d (U - U_d)(U - U_d)ᵀ + ridge I`.
pub fn residual_covariance(u: &DVector<f64>, ds: &DemoSet, ridge: f64) -> DMatrix<f64> {
    let n = u.len();
    let mut acc = DMatrix::zeros(n, n);
    for d in &ds.demos {
        let r = u - d;
        acc += &r * r.transpose();
    }
    acc / ds.len() as f64 + DMatrix::identity(n, n) * ridge
}

/// Alternates the covariance estimate and the inner fit, starting from the
/// sample mean and its inverse-KKT weights.
pub fn estimate(ds: &DemoSet, fp: &ForwardProblem, cfg: &TlsConfig) -> Result<TlsResult> {
    cfg.validate()?;
    ds.validate_for(fp)?;
    if ds.len() < 2 {
        return Err(Error::Invalid("TLS needs at least two demonstrations to estimate a covariance".into()));
    }
    let bs = BilinearStationarity::new(fp);
    let mut u = sample_mean(ds);
    let mut theta = kkt_single(&u, fp, Some(&cfg.norm))?.theta;
    let mut sigma_u = residual_covariance(&u, ds, cfg.ridge);
    let mut delta = f64::INFINITY;
    let mut outer_trace = Vec::new();
    let mut converged = false;
    let mut last = None;
    for _ in 0..cfg.max_outer_iters {
        let sol = inner(ds, &bs, &sigma_u, cfg, &theta)?;
        u = sol.u_hat.clone();
        theta = sol.theta.clone();
        outer_trace.push(OuterRecord {
            cost: sol.cost,
            sigma_delta: delta,
            inner_costs: sol.cost_trace.clone(),
        });
        last = Some(sol);
        let next = residual_covariance(&u, ds, cfg.ridge);
        delta = (&next - &sigma_u).norm();
        sigma_u = next;
        if delta < cfg.sigma_tol {
            converged = true;
            break;
        }
    }
    let sol = last.expect("at least one outer iteration");
    Ok(TlsResult {
        residuals: ds.demos.iter().map(|d| d - &sol.u_hat).collect(),
        theta: sol.theta,
        lambda: sol.lambda,
        u_hat: sol.u_hat,
        sigma_u_hat: sigma_u,
        outer_trace,
        converged,
    })
}
