//! Maximum-a-posteriori estimation of `(U, β)` under the complementarity
//! constraints of the forward problem.
//!
//! The covariance `Σ_U` and the starting point come from the Gibbs chain.
//! The remaining problem is bi-convex: with `U` fixed, the activity of every
//! constraint is known and the cost is a convex quadratic in `β`; with `β`
//! fixed, the sign of every multiplier decides whether its constraint is an
//! equality or an inequality and the cost is a convex quadratic in `U`. The
//! estimator alternates the two exact QPs, follows each round with a damped
//! Gauss-Newton step in both blocks that is kept only when it lowers the cost,
//! and returns the best iterate.
//!
//! `θ` is held on a normalization rule throughout. The stationarity term is
//! homogeneous in `β`, so without it the cost can be lowered by shrinking `β`
//! toward zero instead of moving `U` toward an optimal sequence.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demos::{DemoSet, NoiseKind, NoiseSpec};
use crate::error::{check_len, Error, Result};
use crate::kkt_baseline::NormalizationRule;
use crate::mcmc::{gibbs_run, Acceptance, Priors, DEFAULT_N_ITER, DEFAULT_N_KEEP, DEFAULT_SIGMA_Y};
use crate::model::{join_beta, split_beta, BilinearStationarity, ForwardProblem};
use crate::numerics::{solve_qp, spd_inverse, Qp};

/// Multipliers at or below this (relative to the largest one) are treated
/// as exact zeros.
const SNAP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub n_iter: usize,
    pub n_keep: usize,
    pub seed: u64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            n_iter: DEFAULT_N_ITER,
            n_keep: DEFAULT_N_KEEP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapConfig {
    pub max_outer_iters: usize,
    /// Relative decrease of the cost per alternation below which we stop.
    pub cost_tol: f64,
    /// Constraints with `|g| <= active_tol` may carry a multiplier.
    pub active_tol: f64,
    /// Explicit priors; data-driven defaults when absent.
    pub priors: Option<Priors>,
    pub gibbs: GibbsConfig,
    /// Fixes the scale of `θ`, which the stationarity condition leaves free.
    pub norm: NormalizationRule,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 100,
            cost_tol: 1e-9,
            active_tol: 1e-7,
            priors: None,
            gibbs: GibbsConfig::default(),
            norm: NormalizationRule::Sum { value: 1.0 },
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iters == 0 || !(self.cost_tol > 0.0) || !(self.active_tol > 0.0) {
            return Err(Error::Invalid(
                "MAP iteration limit and tolerances must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// What the estimator keeps from the Gibbs chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsSummary {
    pub n_iter: usize,
    pub n_keep: usize,
    pub acceptance: Acceptance,
    #[serde(with = "crate::io::vector")]
    pub u_mean: DVector<f64>,
    #[serde(with = "crate::io::vector")]
    pub beta_mean: DVector<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    #[serde(with = "crate::io::vector")]
    pub theta: DVector<f64>,
    #[serde(with = "crate::io::vector")]
    pub lambda: DVector<f64>,
    #[serde(with = "crate::io::vector")]
    pub u_hat: DVector<f64>,
    #[serde(with = "crate::io::matrix")]
    pub sigma_u_hat: DMatrix<f64>,
    /// Cost after every half-step, starting at the first feasible pair.
    pub cost_trace: Vec<f64>,
    pub gibbs_diag: Option<GibbsSummary>,
    /// Number of full alternations performed.
    pub iterations: usize,
    pub converged: bool,
}

/// The negative log posterior up to constants:
/// `Σ_d [(U - U_d)ᵀ Σ_U⁻¹ (U - U_d) + (J(U)β)ᵀ Σ_Y⁻¹ (J(U)β)]`
/// `+ (U - U0)ᵀ Σ_U0⁻¹ (U - U0) + (β - β0)ᵀ Σ_β⁻¹ (β - β0)`.
pub fn map_cost(
    u: &DVector<f64>,
    beta: &DVector<f64>,
    sigma_u: &DMatrix<f64>,
    ds: &DemoSet,
    priors: &Priors,
    bs: &BilinearStationarity,
) -> Result<f64> {
    check_len("U", bs.n_inputs(), u.len())?;
    check_len("beta", bs.n_beta(), beta.len())?;
    Weights::new(sigma_u, priors)?.cost(u, beta, ds, priors, bs)
}

/// Inverted covariances shared by the cost and both half-steps.
struct Weights {
    sigma_u_inv: DMatrix<f64>,
    sigma_y_inv: DMatrix<f64>,
    sigma_u0_inv: DMatrix<f64>,
    sigma_beta_inv: DMatrix<f64>,
}

impl Weights {
    fn new(sigma_u: &DMatrix<f64>, priors: &Priors) -> Result<Self> {
        Ok(Self {
            sigma_u_inv: spd_inverse(sigma_u)?,
            sigma_y_inv: spd_inverse(&priors.sigma_y)?,
            sigma_u0_inv: spd_inverse(&priors.sigma_u0)?,
            sigma_beta_inv: spd_inverse(&priors.sigma_beta)?,
        })
    }

    fn cost(&self, u: &DVector<f64>, beta: &DVector<f64>, ds: &DemoSet, priors: &Priors, bs: &BilinearStationarity) -> Result<f64> {
        let r = bs.apply(u, beta);
        let mut acc = ds.len() as f64 * r.dot(&(&self.sigma_y_inv * &r));
        for ud in &ds.demos {
            check_len("demonstration", u.len(), ud.len())?;
            let e = u - ud;
            acc += e.dot(&(&self.sigma_u_inv * &e));
        }
        let du = u - &priors.u0;
        let db = beta - &priors.beta0;
        Ok(acc + du.dot(&(&self.sigma_u0_inv * &du)) + db.dot(&(&self.sigma_beta_inv * &db)))
    }
}

/// β-step: minimizes the cost over `θ >= 0` and `λ >= 0`, with `λ_i` fixed
/// at zero wherever `|g_i(U)| > active_tol`.
fn beta_step(
    u: &DVector<f64>,
    ds: &DemoSet,
    priors: &Priors,
    bs: &BilinearStationarity,
    w: &Weights,
    active_tol: f64,
    norm: &NormalizationRule,
) -> Result<DVector<f64>> {
    let q = bs.q();
    let g = bs.constraint_values(u);
    let free: Vec<usize> = (0..q)
        .chain((0..g.len()).filter(|&i| g[i].abs() <= active_tol).map(|i| q + i))
        .collect();
    let nz = free.len();
    let jac = bs.jacobian(u);
    let js = jac.select_columns(&free);
    let p_sel = w.sigma_beta_inv.select_rows(&free);
    let p_ss = p_sel.select_columns(&free);
    let h = (js.transpose() * &w.sigma_y_inv * &js * ds.len() as f64 + p_ss) * 2.0;
    let c = -(p_sel * &priors.beta0) * 2.0;
    let (row, value) = norm.row(q)?;
    let mut a_eq = DMatrix::zeros(1, nz);
    a_eq.view_mut((0, 0), (1, q)).copy_from(&row.transpose());
    let qp = Qp::new(h, c)
        .with_equalities(a_eq, DVector::from_element(1, value))
        .with_inequalities(-DMatrix::identity(nz, nz), DVector::zeros(nz));
    let sol = solve_qp(&qp, None)?.ensure_optimal()?;
    let mut beta = DVector::zeros(bs.n_beta());
    for (k, &idx) in free.iter().enumerate() {
        beta[idx] = sol.z[k].max(0.0);
    }
    snap_multipliers(&mut beta, q);
    Ok(beta)
}

fn snap_multipliers(beta: &mut DVector<f64>, q: usize) {
    let n = beta.len() - q;
    let mut lambda = beta.rows_mut(q, n);
    let cut = SNAP_TOL * (1.0 + lambda.amax());
    lambda.apply(|l| {
        if *l <= cut {
            *l = 0.0
        }
    });
}

/// U-step: minimizes the cost over `U` with `g_i(U) = 0` where `λ_i > 0` and
/// `g_i(U) <= 0` elsewhere.
fn u_step(
    beta: &DVector<f64>,
    ds: &DemoSet,
    priors: &Priors,
    bs: &BilinearStationarity,
    w: &Weights,
) -> Result<DVector<f64>> {
    let d = ds.len() as f64;
    let (theta, lambda) = split_beta(beta, bs.q());
    let mb = bs.m_beta(&theta);
    let eb = bs.offset(&theta, &lambda);
    let mt_sy = mb.transpose() * &w.sigma_y_inv;
    let demo_sum = ds
        .demos
        .iter()
        .fold(DVector::zeros(bs.n_inputs()), |acc, x| acc + x);
    let h = (&w.sigma_u_inv * d + &mt_sy * &mb * d + &w.sigma_u0_inv) * 2.0;
    let c = -(&w.sigma_u_inv * demo_sum - &mt_sy * &eb * d + &w.sigma_u0_inv * &priors.u0) * 2.0;
    let qp = constrained_qp(h, c, bs, &lambda);
    let sol = solve_qp(&qp, None)?;
    if sol.status != crate::numerics::QpStatus::Optimal {
        let eq: Vec<usize> = (0..lambda.len()).filter(|&i| lambda[i] > 0.0).collect();
        return Err(Error::Infeasible(format!(
            "U-step has no feasible point with constraints {eq:?} held as equalities"
        )));
    }
    Ok(sol.z)
}

/// Attaches `g(U) = G U + g_offset` to a QP in `U`: rows with a positive
/// multiplier as equalities, the rest as inequalities. Rows of `G` that are
/// identically zero do not depend on `U` and are left out.
pub(crate) fn constrained_qp(h: DMatrix<f64>, c: DVector<f64>, bs: &BilinearStationarity, lambda: &DVector<f64>) -> Qp {
    let g = bs.j_lambda.transpose();
    let (mut eq, mut ineq) = (Vec::new(), Vec::new());
    for i in 0..lambda.len() {
        if g.row(i).amax() == 0.0 {
            continue;
        }
        if lambda[i] > 0.0 {
            eq.push(i);
        } else {
            ineq.push(i);
        }
    }
    let rows = |idx: &[usize]| (g.select_rows(idx), -bs.g_offset.select_rows(idx));
    let (a_eq, b_eq) = rows(&eq);
    let (a_in, b_in) = rows(&ineq);
    Qp::new(h, c).with_equalities(a_eq, b_eq).with_inequalities(a_in, b_in)
}

/// Damped Gauss-Newton step on `(U, β)` jointly, holding the activity
/// pattern of the current multipliers: `g_i(U) = 0` with `λ_i >= 0` where
/// `λ_i > 0`, `g_i(U) <= 0` with `λ_i = 0` elsewhere. The stationarity residual
/// is linearized around the current point; every other term is exact. Returns
/// the first candidate that lowers the true cost, trying increasing damping.
#[allow(clippy::too_many_arguments)]
fn joint_step(
    u: &DVector<f64>,
    beta: &DVector<f64>,
    cost: f64,
    ds: &DemoSet,
    priors: &Priors,
    bs: &BilinearStationarity,
    w: &Weights,
    norm: &NormalizationRule,
    damping: &mut f64,
) -> Result<Option<(DVector<f64>, DVector<f64>, f64)>> {
    let (q, nu) = (bs.q(), bs.n_inputs());
    let d = ds.len() as f64;
    let (theta, lambda) = split_beta(beta, q);
    let free: Vec<usize> = (0..q)
        .chain((0..lambda.len()).filter(|&i| lambda[i] > 0.0).map(|i| q + i))
        .collect();
    let nb = free.len();
    let nx = nu + nb;

    let mb = bs.m_beta(&theta);
    let mut k = DMatrix::zeros(nu, nx);
    k.columns_mut(0, nu).copy_from(&mb);
    k.columns_mut(nu, nb).copy_from(&bs.jacobian(u).select_columns(&free));
    let k0 = -(&mb * u);
    let kt_sy = k.transpose() * &w.sigma_y_inv * d;

    let p_sel = w.sigma_beta_inv.select_rows(&free);
    let mut base = &kt_sy * &k;
    {
        let mut uu = base.view_mut((0, 0), (nu, nu));
        uu += &w.sigma_u_inv * d + &w.sigma_u0_inv;
        let mut bb = base.view_mut((nu, nu), (nb, nb));
        bb += p_sel.select_columns(&free);
    }
    let demo_sum = ds.demos.iter().fold(DVector::zeros(nu), |acc, x| acc + x);
    let mut lin = &kt_sy * &k0;
    {
        let mut lu = lin.rows_mut(0, nu);
        lu -= &w.sigma_u_inv * demo_sum + &w.sigma_u0_inv * &priors.u0;
        let mut lb = lin.rows_mut(nu, nb);
        lb -= &p_sel * &priors.beta0;
    }
    let mut x0 = DVector::zeros(nx);
    x0.rows_mut(0, nu).copy_from(u);
    x0.rows_mut(nu, nb).copy_from(&beta.select_rows(&free));
    let scale = base.diagonal().map(|v| v.max(f64::MIN_POSITIVE));

    // constraints on x = (U, θ, λ_A): g rows on U, nonnegativity on β
    let in_u = constrained_qp(DMatrix::zeros(nu, nu), DVector::zeros(nu), bs, &lambda);
    let pad = |a: &DMatrix<f64>| {
        let mut out = DMatrix::zeros(a.nrows(), nx);
        out.columns_mut(0, nu).copy_from(a);
        out
    };
    let mut a_in = DMatrix::zeros(in_u.a_in.nrows() + nb, nx);
    a_in.view_mut((0, 0), (in_u.a_in.nrows(), nx)).copy_from(&pad(&in_u.a_in));
    a_in.view_mut((in_u.a_in.nrows(), nu), (nb, nb))
        .copy_from(&-DMatrix::identity(nb, nb));
    let mut b_in = DVector::zeros(a_in.nrows());
    b_in.rows_mut(0, in_u.b_in.len()).copy_from(&in_u.b_in);

    let (row, value) = norm.row(q)?;
    let mut a_eq = DMatrix::zeros(in_u.a_eq.nrows() + 1, nx);
    a_eq.view_mut((0, 0), (in_u.a_eq.nrows(), nx)).copy_from(&pad(&in_u.a_eq));
    a_eq.view_mut((in_u.a_eq.nrows(), nu), (1, q)).copy_from(&row.transpose());
    let mut b_eq = DVector::from_element(in_u.b_eq.len() + 1, value);
    b_eq.rows_mut(0, in_u.b_eq.len()).copy_from(&in_u.b_eq);

    for _ in 0..JOINT_TRIES {
        let damp = DMatrix::from_diagonal(&(&scale * *damping));
        let h = (&base + &damp) * 2.0;
        let c = (&lin - &damp * &x0) * 2.0;
        let qp = Qp::new(h, c)
            .with_equalities(a_eq.clone(), b_eq.clone())
            .with_inequalities(a_in.clone(), b_in.clone());
        let sol = solve_qp(&qp, None)?;
        if sol.status == crate::numerics::QpStatus::Optimal {
            let u_new = sol.z.rows(0, nu).into_owned();
            let mut beta_new = DVector::zeros(bs.n_beta());
            for (j, &idx) in free.iter().enumerate() {
                beta_new[idx] = sol.z[nu + j].max(0.0);
            }
            snap_multipliers(&mut beta_new, q);
            let c_new = w.cost(&u_new, &beta_new, ds, priors, bs)?;
            if c_new < cost {
                *damping = (*damping * 0.1).max(1e-12);
                return Ok(Some((u_new, beta_new, c_new)));
            }
        }
        *damping *= 10.0;
    }
    Ok(None)
}

const JOINT_TRIES: usize = 12;

/// Result of the alternation alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Alternation {
    pub u: DVector<f64>,
    pub beta: DVector<f64>,
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Alternates β- and U-steps for a fixed `Σ_U`, starting from `init_u`.
pub fn alternate(
    ds: &DemoSet,
    bs: &BilinearStationarity,
    priors: &Priors,
    sigma_u: &DMatrix<f64>,
    init_u: &DVector<f64>,
    cfg: &MapConfig,
) -> Result<Alternation> {
    cfg.validate()?;
    priors.validate(bs.n_inputs(), bs.n_beta())?;
    check_len("initial U", bs.n_inputs(), init_u.len())?;
    let w = Weights::new(sigma_u, priors)?;

    let mut u = init_u.clone();
    let mut beta = beta_step(&u, ds, priors, bs, &w, cfg.active_tol, &cfg.norm)?;
    u = u_step(&beta, ds, priors, bs, &w)?;
    let mut cost = w.cost(&u, &beta, ds, priors, bs)?;
    let mut trace = vec![cost];
    let mut best = (cost, u.clone(), beta.clone());
    let mut converged = false;
    let mut iterations = 1;
    let mut damping = 1e-3;
    while iterations < cfg.max_outer_iters {
        iterations += 1;
        let prev = cost;
        beta = beta_step(&u, ds, priors, bs, &w, cfg.active_tol, &cfg.norm)?;
        trace.push(w.cost(&u, &beta, ds, priors, bs)?);
        u = u_step(&beta, ds, priors, bs, &w)?;
        cost = w.cost(&u, &beta, ds, priors, bs)?;
        trace.push(cost);
        if let Some((u_new, beta_new, c_new)) = joint_step(&u, &beta, cost, ds, priors, bs, &w, &cfg.norm, &mut damping)? {
            (u, beta, cost) = (u_new, beta_new, c_new);
            trace.push(cost);
        }
        if cost < best.0 {
            best = (cost, u.clone(), beta.clone());
        }
        if prev - cost <= cfg.cost_tol * prev.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(Alternation {
        u: best.1,
        beta: best.2,
        cost_trace: trace,
        iterations,
        converged,
    })
}

/// Runs the Gibbs chain for `Σ_U` and the starting point, then alternates.
pub fn estimate<R: Rng + ?Sized>(ds: &DemoSet, fp: &ForwardProblem, cfg: &MapConfig, rng: &mut R) -> Result<MapResult> {
    cfg.validate()?;
    ds.validate_for(fp)?;
    let priors = match &cfg.priors {
        Some(p) => p.clone(),
        None => Priors::from_demos(ds, fp, &cfg.norm)?,
    };
    let chain = gibbs_run(ds, fp, &priors, cfg.gibbs.n_iter, cfg.gibbs.n_keep, rng)?;
    let sigma_u = chain.means.sigma_u.clone();
    let bs = BilinearStationarity::new(fp);
    let alt = alternate(ds, &bs, &priors, &sigma_u, &chain.means.u, cfg)?;
    let (theta, lambda) = split_beta(&alt.beta, bs.q());
    Ok(MapResult {
        theta,
        lambda,
        u_hat: alt.u,
        sigma_u_hat: sigma_u,
        cost_trace: alt.cost_trace,
        gibbs_diag: Some(GibbsSummary {
            n_iter: cfg.gibbs.n_iter,
            n_keep: cfg.gibbs.n_keep,
            acceptance: chain.acceptance_rate,
            u_mean: chain.means.u,
            beta_mean: chain.means.beta,
            warnings: chain.warnings,
        }),
        iterations: alt.iterations,
        converged: alt.converged,
    })
}

/// [`estimate`] with the generator seeded from `cfg.gibbs.seed`.
pub fn estimate_seeded(ds: &DemoSet, fp: &ForwardProblem, cfg: &MapConfig) -> Result<MapResult> {
    estimate(ds, fp, cfg, &mut ChaCha8Rng::seed_from_u64(cfg.gibbs.seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub demos: usize,
    /// Normalized cost at `(U*, β*)`.
    pub cost_at_truth: f64,
    /// Perturbation magnitudes and, per magnitude, the fraction that cost more.
    pub by_magnitude: Vec<(f64, f64)>,
    /// Fraction over all perturbations.
    pub fraction_higher: f64,
}

/// Magnitudes of the random perturbations in [`consistency_cost_check`].
pub const CONSISTENCY_EPS: [f64; 2] = [0.01, 0.1];
pub const CONSISTENCY_DRAWS: usize = 100;

/// Evaluates the data part of the cost divided by `D` at `(U*, β*)` and at
/// random perturbations `U* + ε s_U δ_U`, `β* + ε s_β δ_β` (unit directions,
/// `s = 1 + max|·|`), and reports how often the perturbed point costs more.
/// `Σ_U` is the noise covariance (identity for noiseless data) and
/// `Σ_Y = 1e-2 I`.
pub fn consistency_cost_check<R: Rng + ?Sized>(
    fp: &ForwardProblem,
    theta_star: &DVector<f64>,
    u_star: &DVector<f64>,
    d_large: usize,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<ConsistencyReport> {
    let bs = BilinearStationarity::new(fp);
    let sol = crate::forward::solve_with(&bs, theta_star, None)?;
    check_len("U*", bs.n_inputs(), u_star.len())?;
    let beta_star = join_beta(theta_star, &sol.lambda);
    let ds = crate::demos::generate(fp, u_star, noise, d_large)?;

    let nu = bs.n_inputs();
    let sigma_u = noise_covariance(noise, fp.m(), fp.horizon);
    let sigma_u = if sigma_u.amax() > 0.0 {
        sigma_u
    } else {
        DMatrix::identity(nu, nu)
    };
    let su_inv = spd_inverse(&sigma_u)?;
    let sy_inv = DMatrix::identity(nu, nu) / DEFAULT_SIGMA_Y;
    let dn = d_large as f64;
    let mean = crate::demos::sample_mean(&ds);
    let spread: f64 = ds
        .demos
        .iter()
        .map(|x| {
            let e = x - &mean;
            e.dot(&(&su_inv * &e))
        })
        .sum();
    // Σ_d (U - U_d)ᵀ A (U - U_d) = D (U - Ū)ᵀ A (U - Ū) + Σ_d (U_d - Ū)ᵀ A (U_d - Ū)
    let cost = |u: &DVector<f64>, beta: &DVector<f64>| {
        let r = bs.apply(u, beta);
        let e = u - &mean;
        e.dot(&(&su_inv * &e)) + spread / dn + r.dot(&(&sy_inv * &r))
    };
    let at_truth = cost(u_star, &beta_star);
    let su = 1.0 + u_star.amax();
    let sb = 1.0 + beta_star.amax();
    let mut by_magnitude = Vec::new();
    let mut higher_total = 0;
    let per = CONSISTENCY_DRAWS / CONSISTENCY_EPS.len();
    for eps in CONSISTENCY_EPS {
        let mut higher = 0;
        for _ in 0..per {
            let du = unit(nu, rng) * (eps * su);
            let db = unit(bs.n_beta(), rng) * (eps * sb);
            if cost(&(u_star + du), &(&beta_star + db)) > at_truth {
                higher += 1;
            }
        }
        higher_total += higher;
        by_magnitude.push((eps, higher as f64 / per as f64));
    }
    Ok(ConsistencyReport {
        demos: d_large,
        cost_at_truth: at_truth,
        by_magnitude,
        fraction_higher: higher_total as f64 / (per * CONSISTENCY_EPS.len()) as f64,
    })
}

fn unit<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let norm = v.norm();
        if norm > 0.0 {
            return v / norm;
        }
    }
}

/// Covariance of the stacked noise vector (ignoring truncation).
pub fn noise_covariance(noise: &NoiseSpec, m: usize, horizon: usize) -> DMatrix<f64> {
    let per_step = match &noise.kind {
        NoiseKind::Gaussian { sigma_u } | NoiseKind::TruncatedGaussian { sigma_u, .. } => sigma_u.clone(),
        NoiseKind::Uniform { halfwidth } => DMatrix::from_diagonal(&halfwidth.map(|h| h * h / 3.0)),
    };
    let mut out = DMatrix::zeros(m * horizon, m * horizon);
    for k in 0..horizon {
        out.view_mut((k * m, k * m), (m, m)).copy_from(&per_step);
    }
    out
}
