//! Stochastic simulation for the Bayesian errors-in-variables model.
//!
//! The model treats the stationarity residual of every demonstration as a
//! zero observation `0 = J(U) β + ε_d`, `ε_d ~ N(0, Σ_Y)`, the demonstrations
//! as `U_d ~ N(U, Σ_U)`, and places conjugate priors on `U`, `β` and `Σ_U`.
//! All three full conditionals are then available in closed form, which makes
//! a plain Gibbs sweep possible. A random-walk Metropolis-Hastings step is
//! provided for the `U` block when the stationarity map is not bilinear.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::demos::{sample_covariance, sample_mean, DemoSet};
use crate::error::{check_len, Error, Result};
use crate::kkt_baseline::{kkt_single, NormalizationRule};
use crate::model::{join_beta, BilinearStationarity, ForwardProblem};
use crate::numerics::{cholesky, cholesky_regularized, solve_lower, solve_upper_transpose, spd_inverse, symmetrize};

pub const DEFAULT_N_ITER: usize = 2000;
pub const DEFAULT_N_KEEP: usize = 300;
pub const DEFAULT_SIGMA_Y: f64 = 1e-2;
pub const DEFAULT_MH_SCALE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    #[serde(with = "crate::io::vector")]
    pub u0: DVector<f64>,
    #[serde(with = "crate::io::matrix")]
    pub sigma_u0: DMatrix<f64>,
    #[serde(with = "crate::io::vector")]
    pub beta0: DVector<f64>,
    #[serde(with = "crate::io::matrix")]
    pub sigma_beta: DMatrix<f64>,
    #[serde(with = "crate::io::matrix")]
    pub w_u: DMatrix<f64>,
    pub m_u: f64,
    #[serde(with = "crate::io::matrix")]
    pub sigma_y: DMatrix<f64>,
}

impl Priors {
    /// Data-driven defaults centred on the sample mean of the demonstrations.
    ///
    /// Scales derived from the sample covariance are floored at
    /// `1e-8 (1 + mean(U_m²))` so that noiseless demonstrations still yield
    /// proper priors.
    pub fn from_demos(ds: &DemoSet, fp: &ForwardProblem, norm: &NormalizationRule) -> Result<Self> {
        ds.validate_for(fp)?;
        let u0 = sample_mean(ds);
        let nu = u0.len();
        let cov = sample_covariance(ds);
        let floor = 1e-8 * (1.0 + u0.norm_squared() / nu as f64);

        let spread = (10.0 * cov.trace() / nu as f64).max(floor);
        let init = kkt_single(&u0, fp, Some(norm))?;
        let beta0 = join_beta(&init.theta, &init.lambdas[0]);
        let sigma_beta = DMatrix::from_diagonal(&beta0.map(|b| 100.0 * (b * b).max(1.0)));
        let w_u = DMatrix::from_diagonal(&cov.diagonal().map(|v| v.max(floor)));
        Ok(Self {
            u0,
            sigma_u0: DMatrix::identity(nu, nu) * spread,
            beta0,
            sigma_beta,
            w_u,
            m_u: nu as f64 + 2.0,
            sigma_y: DMatrix::identity(nu, nu) * DEFAULT_SIGMA_Y,
        })
    }

    pub fn validate(&self, n_inputs: usize, n_beta: usize) -> Result<()> {
        check_len("prior mean U0", n_inputs, self.u0.len())?;
        check_len("prior mean beta0", n_beta, self.beta0.len())?;
        for (name, m, dim) in [
            ("Sigma_U0", &self.sigma_u0, n_inputs),
            ("Sigma_beta", &self.sigma_beta, n_beta),
            ("W_U", &self.w_u, n_inputs),
            ("Sigma_Y", &self.sigma_y, n_inputs),
        ] {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::Invalid(format!("{name} must be {dim}x{dim}")));
            }
            if (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
                return Err(Error::Invalid(format!("{name} must be symmetric")));
            }
            cholesky(m)?;
        }
        if !(self.m_u > n_inputs as f64 + 1.0) {
            return Err(Error::Invalid(format!(
                "m_U must exceed {} for the inverse Wishart mean to exist",
                n_inputs + 1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    #[serde(with = "crate::io::vector")]
    pub u: DVector<f64>,
    #[serde(with = "crate::io::vector")]
    pub beta: DVector<f64>,
    #[serde(with = "crate::io::matrix")]
    pub sigma_u: DMatrix<f64>,
    pub iteration: usize,
}

/// Fraction of accepted draws per block. Exact Gibbs blocks always accept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub beta: f64,
    pub u: f64,
    pub sigma_u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeans {
    #[serde(with = "crate::io::vector")]
    pub u: DVector<f64>,
    #[serde(with = "crate::io::vector")]
    pub beta: DVector<f64>,
    #[serde(with = "crate::io::matrix")]
    pub sigma_u: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub samples: Vec<ChainState>,
    pub acceptance_rate: Acceptance,
    pub means: ChainMeans,
    pub warnings: Vec<String>,
}

impl ChainOutput {
    /// Writes one row per retained sample: iteration, β, U, diag(Σ_U).
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let io_err = |source: std::io::Error| Error::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut w = csv::Writer::from_path(path)?;
        let Some(first) = self.samples.first() else {
            return Ok(());
        };
        let mut header = vec!["iteration".to_string()];
        header.extend((0..first.beta.len()).map(|i| format!("beta_{i}")));
        header.extend((0..first.u.len()).map(|i| format!("u_{i}")));
        header.extend((0..first.sigma_u.nrows()).map(|i| format!("sigma_u_{i}{i}")));
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![s.iteration.to_string()];
            row.extend(s.beta.iter().map(|v| v.to_string()));
            row.extend(s.u.iter().map(|v| v.to_string()));
            row.extend(s.sigma_u.diagonal().iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(io_err)?;
        Ok(())
    }
}

/// `mean + L z` with `L L^T = cov`.
pub fn sample_mvn<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    check_len("covariance", mean.len(), cov.nrows())?;
    let l = cholesky(cov)?;
    let z = standard_normal(mean.len(), rng);
    Ok(mean + l * z)
}

/// Draw from `N(mean, P^{-1})` given the Cholesky factor `L` of the precision
/// `P`: `mean + L^{-T} z`.
fn sample_mvn_precision<R: Rng + ?Sized>(mean: &DVector<f64>, prec_chol: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = standard_normal(mean.len(), rng);
    mean + solve_upper_transpose(prec_chol, &z)
}

fn standard_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Draw from the inverse Wishart `IW(W, ν)` (mean `W / (ν - p - 1)`).
///
/// A Wishart matrix with scale `W^{-1}` is drawn through the Bartlett
/// decomposition `(L A)(L A)^T` and inverted through its triangular factor.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(w: &DMatrix<f64>, nu: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = w.nrows();
    if w.ncols() != p {
        return Err(Error::Invalid("inverse Wishart scale must be square".into()));
    }
    if !(nu > p as f64 - 1.0) {
        return Err(Error::Invalid(format!(
            "inverse Wishart needs more than {} degrees of freedom, got {nu}",
            p as f64 - 1.0
        )));
    }
    let l = cholesky(&spd_inverse(w)?)?;
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(nu - i as f64).map_err(|e| Error::Invalid(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let t = l * a;
    let t_inv = t
        .solve_lower_triangular(&DMatrix::identity(p, p))
        .ok_or(Error::NotPositiveDefinite(0))?;
    Ok(symmetrize(&(t_inv.transpose() * t_inv)))
}

/// A stationarity map that is linear in `β` for fixed `U`.
pub trait Stationarity {
    fn n_inputs(&self) -> usize;
    fn n_beta(&self) -> usize;
    /// `J(U)`, the derivative of the residual with respect to `β`.
    fn jacobian(&self, u: &DVector<f64>) -> DMatrix<f64>;

    fn residual(&self, u: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
        self.jacobian(u) * beta
    }

    /// The bilinear decomposition when the map has one; enables the exact
    /// `U` update.
    fn bilinear(&self) -> Option<&BilinearStationarity> {
        None
    }
}

impl Stationarity for BilinearStationarity {
    fn n_inputs(&self) -> usize {
        BilinearStationarity::n_inputs(self)
    }

    fn n_beta(&self) -> usize {
        BilinearStationarity::n_beta(self)
    }

    fn jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        BilinearStationarity::jacobian(self, u)
    }

    fn residual(&self, u: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
        self.apply(u, beta)
    }

    fn bilinear(&self) -> Option<&BilinearStationarity> {
        Some(self)
    }
}

/// Priors with their inverses cached for repeated conditional evaluations.
struct Prepared {
    sigma_beta_inv: DMatrix<f64>,
    sigma_beta_inv_beta0: DVector<f64>,
    sigma_u0_inv: DMatrix<f64>,
    sigma_u0_inv_u0: DVector<f64>,
    sigma_y_inv: DMatrix<f64>,
}

impl Prepared {
    fn new(priors: &Priors) -> Result<Self> {
        let sigma_beta_inv = spd_inverse(&priors.sigma_beta)?;
        let sigma_u0_inv = spd_inverse(&priors.sigma_u0)?;
        Ok(Self {
            sigma_beta_inv_beta0: &sigma_beta_inv * &priors.beta0,
            sigma_beta_inv,
            sigma_u0_inv_u0: &sigma_u0_inv * &priors.u0,
            sigma_u0_inv,
            sigma_y_inv: spd_inverse(&priors.sigma_y)?,
        })
    }

    /// Returns the conditional mean and the Cholesky factor of its precision.
    fn beta(&self, d: usize, jac: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let prec = &self.sigma_beta_inv + jac.transpose() * &self.sigma_y_inv * jac * d as f64;
        let l = cholesky_regularized(&symmetrize(&prec))?;
        let mean = solve_upper_transpose(&l, &solve_lower(&l, &self.sigma_beta_inv_beta0));
        Ok((mean, l))
    }

    fn u(
        &self,
        ds: &DemoSet,
        bs: &BilinearStationarity,
        beta: &DVector<f64>,
        sigma_u_inv: &DMatrix<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let d = ds.len() as f64;
        let (theta, lambda) = crate::model::split_beta(beta, bs.q());
        let mb = bs.m_beta(&theta);
        let eb = bs.offset(&theta, &lambda);
        let mt_sy = mb.transpose() * &self.sigma_y_inv;
        let prec = &self.sigma_u0_inv + &mt_sy * &mb * d + sigma_u_inv * d;
        let rhs = &self.sigma_u0_inv_u0 - &mt_sy * &eb * d + sigma_u_inv * demo_sum(ds);
        let l = cholesky_regularized(&symmetrize(&prec))?;
        let mean = solve_upper_transpose(&l, &solve_lower(&l, &rhs));
        Ok((mean, l))
    }

    fn log_target_u(
        &self,
        ds: &DemoSet,
        model: &dyn Stationarity,
        u: &DVector<f64>,
        beta: &DVector<f64>,
        sigma_u_inv: &DMatrix<f64>,
        u0: &DVector<f64>,
    ) -> f64 {
        let r = model.residual(u, beta);
        let du = u - u0;
        let mut acc = du.dot(&(&self.sigma_u0_inv * &du)) + ds.len() as f64 * r.dot(&(&self.sigma_y_inv * &r));
        for ud in &ds.demos {
            let e = ud - u;
            acc += e.dot(&(sigma_u_inv * &e));
        }
        -0.5 * acc
    }
}

fn demo_sum(ds: &DemoSet) -> DVector<f64> {
    ds.demos
        .iter()
        .fold(DVector::zeros(ds.demos[0].len()), |acc, d| acc + d)
}

fn mean_and_cov(mean: DVector<f64>, prec_chol: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = mean.len();
    let mut cov = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        cov.set_column(j, &solve_upper_transpose(prec_chol, &solve_lower(prec_chol, &e)));
    }
    (mean, symmetrize(&cov))
}

/// Full conditional of `β` given `U`: Gaussian with precision
/// `Σ_β^{-1} + D J(U)^T Σ_Y^{-1} J(U)`.
pub fn full_conditional_beta(
    ds: &DemoSet,
    u: &DVector<f64>,
    bs: &BilinearStationarity,
    priors: &Priors,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    priors.validate(bs.n_inputs(), bs.n_beta())?;
    check_len("U", bs.n_inputs(), u.len())?;
    let (mean, l) = Prepared::new(priors)?.beta(ds.len(), &bs.jacobian(u))?;
    Ok(mean_and_cov(mean, &l))
}

/// Full conditional of `U` given `β` and `Σ_U`.
pub fn full_conditional_u(
    ds: &DemoSet,
    beta: &DVector<f64>,
    sigma_u: &DMatrix<f64>,
    bs: &BilinearStationarity,
    priors: &Priors,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    priors.validate(bs.n_inputs(), bs.n_beta())?;
    check_len("beta", bs.n_beta(), beta.len())?;
    let (mean, l) = Prepared::new(priors)?.u(ds, bs, beta, &spd_inverse(sigma_u)?)?;
    Ok(mean_and_cov(mean, &l))
}

/// Full conditional of `Σ_U`: `IW(W_U + Σ_d (U_d - U)(U_d - U)^T, D + m_U)`.
pub fn full_conditional_sigma_u(ds: &DemoSet, u: &DVector<f64>, priors: &Priors) -> (DMatrix<f64>, f64) {
    let mut w = priors.w_u.clone();
    for d in &ds.demos {
        let r = d - u;
        w += &r * r.transpose();
    }
    (w, ds.len() as f64 + priors.m_u)
}

/// Outcome of one Metropolis-Hastings transition.
#[derive(Debug, Clone, PartialEq)]
pub struct MhStep {
    pub next: DVector<f64>,
    pub accepted: bool,
}

/// A proposal kernel `q(· | current)`.
pub trait Proposal {
    fn sample<R: Rng + ?Sized>(&self, current: &DVector<f64>, rng: &mut R) -> DVector<f64>;
    /// `log q(to | from)` up to a constant shared by all pairs.
    fn log_density(&self, to: &DVector<f64>, from: &DVector<f64>) -> f64;
}

/// Gaussian `N(mean, cov)` stored through its Cholesky factor.
#[derive(Debug, Clone)]
struct Gaussian {
    chol: DMatrix<f64>,
}

impl Gaussian {
    fn new(cov: &DMatrix<f64>) -> Result<Self> {
        Ok(Self { chol: cholesky(cov)? })
    }

    fn log_kernel(&self, x: &DVector<f64>) -> f64 {
        -0.5 * solve_lower(&self.chol, x).norm_squared()
    }
}

/// `z' = z + ε`, `ε ~ N(0, cov)`; symmetric, so its density cancels.
#[derive(Debug, Clone)]
pub struct RandomWalk {
    step: Gaussian,
}

impl RandomWalk {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        Ok(Self { step: Gaussian::new(cov)? })
    }
}

impl Proposal for RandomWalk {
    fn sample<R: Rng + ?Sized>(&self, current: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        current + &self.step.chol * standard_normal(current.len(), rng)
    }

    fn log_density(&self, _to: &DVector<f64>, _from: &DVector<f64>) -> f64 {
        0.0
    }
}

/// `z' ~ N(mean, cov)` regardless of the current state.
#[derive(Debug, Clone)]
pub struct Independence {
    mean: DVector<f64>,
    dist: Gaussian,
}

impl Independence {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        check_len("proposal covariance", mean.len(), cov.nrows())?;
        Ok(Self {
            mean,
            dist: Gaussian::new(cov)?,
        })
    }
}

impl Proposal for Independence {
    fn sample<R: Rng + ?Sized>(&self, _current: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        &self.mean + &self.dist.chol * standard_normal(self.mean.len(), rng)
    }

    fn log_density(&self, to: &DVector<f64>, _from: &DVector<f64>) -> f64 {
        self.dist.log_kernel(&(to - &self.mean))
    }
}

/// One Metropolis-Hastings transition with acceptance probability
/// `min(1, π(z') q(z | z') / (π(z) q(z' | z)))`. A non-finite target at the
/// proposal rejects.
pub fn mh_step<R, F, P>(current: &DVector<f64>, log_target: F, proposal: &P, rng: &mut R) -> Result<MhStep>
where
    R: Rng + ?Sized,
    F: Fn(&DVector<f64>) -> f64,
    P: Proposal,
{
    let here = log_target(current);
    if !here.is_finite() {
        return Err(Error::Invalid("log target is not finite at the current state".into()));
    }
    Ok(mh_transition(current, here, &log_target, proposal, rng).0)
}

fn mh_transition<R, F, P>(current: &DVector<f64>, here: f64, log_target: &F, proposal: &P, rng: &mut R) -> (MhStep, f64)
where
    R: Rng + ?Sized,
    F: Fn(&DVector<f64>) -> f64,
    P: Proposal,
{
    let cand = proposal.sample(current, rng);
    let there = log_target(&cand);
    let reject = |current: &DVector<f64>| {
        (
            MhStep {
                next: current.clone(),
                accepted: false,
            },
            here,
        )
    };
    if !there.is_finite() {
        return reject(current);
    }
    let log_ratio = there - here + proposal.log_density(current, &cand) - proposal.log_density(&cand, current);
    let u: f64 = rng.random();
    if log_ratio >= 0.0 || u.ln() < log_ratio {
        (MhStep { next: cand, accepted: true }, there)
    } else {
        reject(current)
    }
}

/// How the `U` block is updated inside a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UStep {
    /// Exact draw from the Gaussian full conditional (bilinear models only).
    Exact,
    /// Random walk `N(U, a Σ_U)`.
    Metropolis { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub n_keep: usize,
    pub u_step: UStep,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_iter: DEFAULT_N_ITER,
            n_keep: DEFAULT_N_KEEP,
            u_step: UStep::Exact,
        }
    }
}

/// One MH update of `U` against its full conditional with proposal
/// `N(U, a Σ_U)`. Returns the draw and whether it was accepted.
#[allow(clippy::too_many_arguments)]
pub fn mh_within_gibbs_u<R: Rng + ?Sized>(
    ds: &DemoSet,
    model: &dyn Stationarity,
    u: &DVector<f64>,
    beta: &DVector<f64>,
    sigma_u: &DMatrix<f64>,
    priors: &Priors,
    scale: f64,
    rng: &mut R,
) -> Result<MhStep> {
    let prep = Prepared::new(priors)?;
    let sigma_u_inv = spd_inverse(sigma_u)?;
    let target = |x: &DVector<f64>| prep.log_target_u(ds, model, x, beta, &sigma_u_inv, &priors.u0);
    mh_step(u, target, &u_proposal(sigma_u, scale)?, rng)
}

fn u_proposal(sigma_u: &DMatrix<f64>, scale: f64) -> Result<DegenerateOr<RandomWalk>> {
    if scale < 0.0 || !scale.is_finite() {
        return Err(Error::Invalid(format!("proposal scale must be >= 0, got {scale}")));
    }
    if scale == 0.0 {
        return Ok(DegenerateOr::Degenerate);
    }
    Ok(DegenerateOr::Proper(RandomWalk::new(&(sigma_u * scale))?))
}

/// A zero-variance proposal always returns the current state.
enum DegenerateOr<P> {
    Degenerate,
    Proper(P),
}

impl<P: Proposal> Proposal for DegenerateOr<P> {
    fn sample<R: Rng + ?Sized>(&self, current: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        match self {
            DegenerateOr::Degenerate => current.clone(),
            DegenerateOr::Proper(p) => p.sample(current, rng),
        }
    }

    fn log_density(&self, to: &DVector<f64>, from: &DVector<f64>) -> f64 {
        match self {
            DegenerateOr::Degenerate => 0.0,
            DegenerateOr::Proper(p) => p.log_density(to, from),
        }
    }
}

/// Closed-form Gibbs sampler for a linear-quadratic-polytopic problem.
pub fn gibbs_run<R: Rng + ?Sized>(
    ds: &DemoSet,
    fp: &ForwardProblem,
    priors: &Priors,
    n_iter: usize,
    n_keep: usize,
    rng: &mut R,
) -> Result<ChainOutput> {
    ds.validate_for(fp)?;
    let bs = BilinearStationarity::new(fp);
    run_chain(
        ds,
        &bs,
        priors,
        &ChainConfig {
            n_iter,
            n_keep,
            u_step: UStep::Exact,
        },
        rng,
    )
}

/// Sweeps `β → U → Σ_U`, starting from `U = U_m`, `β = β0`, `Σ_U = I`, and
/// keeps the last `n_keep` states.
pub fn run_chain<R: Rng + ?Sized>(
    ds: &DemoSet,
    model: &dyn Stationarity,
    priors: &Priors,
    cfg: &ChainConfig,
    rng: &mut R,
) -> Result<ChainOutput> {
    let init = ChainState {
        u: sample_mean(ds),
        beta: priors.beta0.clone(),
        sigma_u: DMatrix::identity(model.n_inputs(), model.n_inputs()),
        iteration: 0,
    };
    run_chain_from(ds, model, priors, cfg, init, rng)
}

/// [`run_chain`] from an explicit initial state.
pub fn run_chain_from<R: Rng + ?Sized>(
    ds: &DemoSet,
    model: &dyn Stationarity,
    priors: &Priors,
    cfg: &ChainConfig,
    init: ChainState,
    rng: &mut R,
) -> Result<ChainOutput> {
    let nu = model.n_inputs();
    priors.validate(nu, model.n_beta())?;
    if ds.is_empty() {
        return Err(Error::Invalid("the chain needs at least one demonstration".into()));
    }
    for d in &ds.demos {
        check_len("demonstration", nu, d.len())?;
    }
    if cfg.n_keep == 0 || cfg.n_keep > cfg.n_iter {
        return Err(Error::Invalid(format!(
            "need 0 < n_keep <= n_iter, got n_keep = {} and n_iter = {}",
            cfg.n_keep, cfg.n_iter
        )));
    }
    let mut warnings = Vec::new();
    let exact = match cfg.u_step {
        UStep::Exact => Some(model.bilinear().ok_or_else(|| {
            Error::Invalid("the exact U update needs a bilinear stationarity map".into())
        })?),
        UStep::Metropolis { scale } => {
            if scale == 0.0 {
                let msg = "MH proposal scale is zero: every proposal equals the current state, so the U block never moves".to_string();
                log::warn!("{msg}");
                warnings.push(msg);
            }
            None
        }
    };

    let prep = Prepared::new(priors)?;
    let d = ds.len();
    // β is drawn first in every sweep, so only U and Σ_U of `init` matter
    let ChainState { mut u, mut sigma_u, .. } = init;
    let mut samples = Vec::with_capacity(cfg.n_keep);
    let mut u_accepted = 0usize;
    for it in 1..=cfg.n_iter {
        let (mean, l) = prep.beta(d, &model.jacobian(&u))?;
        let beta = sample_mvn_precision(&mean, &l, rng);

        let sigma_u_inv = spd_inverse(&sigma_u)?;
        match (exact, cfg.u_step) {
            (Some(bs), _) => {
                let (mean, l) = prep.u(ds, bs, &beta, &sigma_u_inv)?;
                u = sample_mvn_precision(&mean, &l, rng);
                u_accepted += 1;
            }
            (None, UStep::Metropolis { scale }) => {
                let target = |x: &DVector<f64>| prep.log_target_u(ds, model, x, &beta, &sigma_u_inv, &priors.u0);
                let here = target(&u);
                let (step, _) = mh_transition(&u, here, &target, &u_proposal(&sigma_u, scale)?, rng);
                u_accepted += usize::from(step.accepted);
                u = step.next;
            }
            (None, UStep::Exact) => unreachable!("exact step resolved above"),
        }

        let (w, nu_post) = full_conditional_sigma_u(ds, &u, priors);
        sigma_u = sample_inverse_wishart(&w, nu_post, rng)?;

        if it > cfg.n_iter - cfg.n_keep {
            samples.push(ChainState {
                u: u.clone(),
                beta: beta.clone(),
                sigma_u: sigma_u.clone(),
                iteration: it,
            });
        }
    }

    let means = chain_means(&samples);
    Ok(ChainOutput {
        samples,
        acceptance_rate: Acceptance {
            beta: 1.0,
            u: u_accepted as f64 / cfg.n_iter as f64,
            sigma_u: 1.0,
        },
        means,
        warnings,
    })
}

fn chain_means(samples: &[ChainState]) -> ChainMeans {
    let k = samples.len() as f64;
    let first = &samples[0];
    let mut means = ChainMeans {
        u: DVector::zeros(first.u.len()),
        beta: DVector::zeros(first.beta.len()),
        sigma_u: DMatrix::zeros(first.sigma_u.nrows(), first.sigma_u.ncols()),
    };
    for s in samples {
        means.u += &s.u;
        means.beta += &s.beta;
        means.sigma_u += &s.sigma_u;
    }
    means.u /= k;
    means.beta /= k;
    means.sigma_u /= k;
    means
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward;
    use crate::model::{LinearSystem, PolytopicConstraints, QuadraticFeature};
    use crate::problems::spring_damper;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// One input, one step, a single feature `(u - 1)²`: `J(U) = 2 (U - 1)`.
    fn scalar_problem() -> ForwardProblem {
        let sys = LinearSystem::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        ForwardProblem::new(
            sys,
            vec![QuadraticFeature::input(0, 1.0)],
            PolytopicConstraints::none(1, 1),
            1,
            DVector::from_element(1, 0.0),
        )
        .unwrap()
    }

    fn scalar_priors(beta0: f64, s_beta: f64, u0: f64, s_u0: f64, s_y: f64) -> Priors {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        Priors {
            u0: DVector::from_element(1, u0),
            sigma_u0: one(s_u0),
            beta0: DVector::from_element(1, beta0),
            sigma_beta: one(s_beta),
            w_u: one(0.1),
            m_u: 3.0,
            sigma_y: one(s_y),
        }
    }

    fn scalar_demos(fp: &ForwardProblem, values: &[f64]) -> DemoSet {
        DemoSet::new(fp, values.iter().map(|&v| DVector::from_element(1, v)).collect()).unwrap()
    }

    /// Total variation between a grid-normalized unnormalized log density and
    /// a Gaussian.
    fn grid_tv(log_density: impl Fn(f64) -> f64, mean: f64, var: f64) -> f64 {
        let (lo, hi, n) = (mean - 12.0 * var.sqrt(), mean + 12.0 * var.sqrt(), 200_001);
        let h = (hi - lo) / (n - 1) as f64;
        let xs: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
        let logs: Vec<f64> = xs.iter().map(|&x| log_density(x)).collect();
        let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - peak).exp()).collect();
        let z: f64 = w.iter().sum::<f64>() * h;
        let norm = (2.0 * std::f64::consts::PI * var).sqrt();
        0.5 * xs
            .iter()
            .zip(&w)
            .map(|(&x, &wi)| (wi / z - (-(x - mean).powi(2) / (2.0 * var)).exp() / norm).abs() * h)
            .sum::<f64>()
    }

    #[test]
    fn mvn_degenerate_and_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mean = DVector::from_vec(vec![1.0, -2.0]);
        let x = sample_mvn(&mean, &(DMatrix::identity(2, 2) * 1e-30), &mut rng).unwrap();
        assert!((x - &mean).amax() < 1e-12);

        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 0.5]);
        let n = 100_000;
        let draws: Vec<_> = (0..n).map(|_| sample_mvn(&mean, &cov, &mut rng).unwrap()).collect();
        let m = draws.iter().fold(DVector::zeros(2), |a, d| a + d) / n as f64;
        let c = draws
            .iter()
            .fold(DMatrix::zeros(2, 2), |a, d| a + (d - &m) * (d - &m).transpose())
            / (n - 1) as f64;
        assert!((c - &cov).norm() / cov.norm() < 0.03);

        let a = sample_mvn(&mean, &cov, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_mvn(&mean, &cov, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            sample_mvn(&mean, &(-DMatrix::identity(2, 2)), &mut rng),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn inverse_wishart_scalar_is_inverse_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (w, nu) = (3.0, 7.0);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| sample_inverse_wishart(&DMatrix::from_element(1, 1, w), nu, &mut rng).unwrap()[(0, 0)])
            .sum::<f64>()
            / n as f64;
        assert!((mean / (w / (nu - 2.0)) - 1.0).abs() < 0.03, "{mean}");
    }

    #[test]
    fn inverse_wishart_mean_matches_naive_oracle() {
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let nu = 10.0;
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let s = sample_inverse_wishart(&w, nu, &mut rng).unwrap();
            assert!(cholesky(&s).is_ok());
            acc += s;
        }
        let mean = acc / n as f64;
        let analytic = &w / (nu - 3.0);
        assert!((&mean - &analytic).norm() / analytic.norm() < 0.05);

        // Wishart(W^-1, ν) as a sum of ν outer products, then inverted.
        let winv = spd_inverse(&w).unwrap();
        let mut oracle = DMatrix::zeros(2, 2);
        let m = 20_000;
        for _ in 0..m {
            let mut s = DMatrix::zeros(2, 2);
            for _ in 0..nu as usize {
                let x = sample_mvn(&DVector::zeros(2), &winv, &mut rng).unwrap();
                s += &x * x.transpose();
            }
            oracle += spd_inverse(&s).unwrap();
        }
        oracle /= m as f64;
        assert!((&oracle - &analytic).norm() / analytic.norm() < 0.05);
        assert!(sample_inverse_wishart(&w, 0.5, &mut rng).is_err());
    }

    #[test]
    fn beta_conditional_matches_grid() {
        let fp = scalar_problem();
        let bs = BilinearStationarity::new(&fp);
        let ds = scalar_demos(&fp, &[1.1, 1.5, 1.2]);
        let (beta0, s_beta, s_y) = (2.0, 1.0, 0.5);
        let priors = scalar_priors(beta0, s_beta, 1.0, 1.0, s_y);
        let u = 1.3;
        let (mean, cov) = full_conditional_beta(&ds, &DVector::from_element(1, u), &bs, &priors).unwrap();
        let j = 2.0 * (u - 1.0);
        let log_post = |b: f64| -(b - beta0).powi(2) / (2.0 * s_beta) - 3.0 * (j * b).powi(2) / (2.0 * s_y);
        assert!(grid_tv(log_post, mean[0], cov[(0, 0)]) <= 1e-3);
    }

    #[test]
    fn u_conditional_matches_grid() {
        let fp = scalar_problem();
        let bs = BilinearStationarity::new(&fp);
        let values = [1.1, 1.5, 1.2, 0.9];
        let ds = scalar_demos(&fp, &values);
        let (u0, s_u0, s_y, s_u, theta) = (1.4, 2.0, 0.3, 0.05, 0.7);
        let priors = scalar_priors(1.0, 1.0, u0, s_u0, s_y);
        let (mean, cov) = full_conditional_u(
            &ds,
            &DVector::from_element(1, theta),
            &DMatrix::from_element(1, 1, s_u),
            &bs,
            &priors,
        )
        .unwrap();
        let log_post = |u: f64| {
            let r = 2.0 * theta * (u - 1.0);
            -(u - u0).powi(2) / (2.0 * s_u0) - 4.0 * r * r / (2.0 * s_y)
                - values.iter().map(|d| (d - u).powi(2)).sum::<f64>() / (2.0 * s_u)
        };
        assert!(grid_tv(log_post, mean[0], cov[(0, 0)]) <= 1e-3);
    }

    #[test]
    fn flat_limits() {
        let fp = scalar_problem();
        let bs = BilinearStationarity::new(&fp);
        let ds = scalar_demos(&fp, &[1.1, 1.5, 1.2, 0.8]);
        // flat β prior: the posterior mean is pulled onto the null space of J
        let priors = scalar_priors(2.0, 1e12, 1.0, 1.0, 0.5);
        let (mean, _) = full_conditional_beta(&ds, &DVector::from_element(1, 1.3), &bs, &priors).unwrap();
        assert!(mean[0].abs() < 1e-6);

        // β = 0 with a flat U prior: mean of the demos, covariance Σ_U / D
        let priors = scalar_priors(1.0, 1.0, 0.0, 1e12, 0.5);
        let s_u = DMatrix::from_element(1, 1, 0.2);
        let (mean, cov) = full_conditional_u(&ds, &DVector::zeros(1), &s_u, &bs, &priors).unwrap();
        assert!((mean[0] - 1.15).abs() < 1e-9);
        assert!((cov[(0, 0)] - 0.05).abs() < 1e-9);

        // uninformative stationarity: same limit for any β
        let priors = scalar_priors(1.0, 1.0, 0.0, 1e12, 1e12);
        let (mean, cov) = full_conditional_u(&ds, &DVector::from_element(1, 5.0), &s_u, &bs, &priors).unwrap();
        assert!((mean[0] - 1.15).abs() < 1e-6);
        assert!((cov[(0, 0)] - 0.05).abs() < 1e-6);
    }

    fn kron_ones(d: usize, block: &DMatrix<f64>) -> DMatrix<f64> {
        let (r, c) = block.shape();
        let mut out = DMatrix::zeros(d * r, c);
        for i in 0..d {
            out.view_mut((i * r, 0), (r, c)).copy_from(block);
        }
        out
    }

    fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
        let n: usize = blocks.iter().map(|b| b.nrows()).sum();
        let mut out = DMatrix::zeros(n, n);
        let mut o = 0;
        for b in blocks {
            out.view_mut((o, o), b.shape()).copy_from(b);
            o += b.nrows();
        }
        out
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    /// Random small problem: `n = m = 1`, `N = 3`, an input bound.
    fn small_problem(rng: &mut ChaCha8Rng) -> ForwardProblem {
        let sys = LinearSystem::new(
            DMatrix::from_element(1, 1, rng.random_range(0.5..1.0)),
            DMatrix::from_element(1, 1, rng.random_range(0.5..1.5)),
        )
        .unwrap();
        ForwardProblem::new(
            sys,
            vec![QuadraticFeature::state(0, rng.random_range(-1.0..1.0)), QuadraticFeature::input(0, 0.0)],
            PolytopicConstraints::input_upper(1, 1, 0, 0.5),
            3,
            DVector::from_element(1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn conditionals_match_stacked_linear_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let fp = small_problem(&mut rng);
            let bs = BilinearStationarity::new(&fp);
            let (nu, nb) = (bs.n_inputs(), bs.n_beta());
            let d = 3;
            let demos: Vec<_> = (0..d)
                .map(|_| DVector::from_fn(nu, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let ds = DemoSet::new(&fp, demos.clone()).unwrap();
            let priors = Priors {
                u0: DVector::from_fn(nu, |_, _| rng.random_range(-1.0..1.0)),
                sigma_u0: random_spd(&mut rng, nu),
                beta0: DVector::from_fn(nb, |_, _| rng.random_range(0.0..2.0)),
                sigma_beta: random_spd(&mut rng, nb),
                w_u: random_spd(&mut rng, nu),
                m_u: nu as f64 + 2.0,
                sigma_y: random_spd(&mut rng, nu),
            };
            let u = DVector::from_fn(nu, |_, _| rng.random_range(-1.0..1.0));
            let beta = DVector::from_fn(nb, |_, _| rng.random_range(0.0..2.0));
            let sigma_u = random_spd(&mut rng, nu);

            // β: y = J_Y β + ε with y = 0, J_Y = 1_D ⊗ J(U)
            let jy = kron_ones(d, &bs.jacobian(&u));
            let sy = block_diag(&vec![priors.sigma_y.clone(); d]);
            let sb_inv = priors.sigma_beta.clone().try_inverse().unwrap();
            let prec = &sb_inv + jy.transpose() * sy.clone().try_inverse().unwrap() * &jy;
            let cov = prec.try_inverse().unwrap();
            let mean = &cov * (&sb_inv * &priors.beta0);
            let (m, c) = full_conditional_beta(&ds, &u, &bs, &priors).unwrap();
            assert!((m - mean).amax() <= 1e-8 * (1.0 + m_abs(&cov)));
            assert!((c - &cov).amax() <= 1e-8 * (1.0 + m_abs(&cov)));

            // U: y = S_D U + μ_D + ε with y = [0; U_1..U_D]
            let (theta, lambda) = crate::model::split_beta(&beta, bs.q());
            let mb = bs.m_beta(&theta);
            let eb = bs.offset(&theta, &lambda);
            let mut sd = DMatrix::zeros(2 * d * nu, nu);
            sd.view_mut((0, 0), (d * nu, nu)).copy_from(&kron_ones(d, &mb));
            sd.view_mut((d * nu, 0), (d * nu, nu))
                .copy_from(&kron_ones(d, &DMatrix::identity(nu, nu)));
            let mut mu = DVector::zeros(2 * d * nu);
            let mut y = DVector::zeros(2 * d * nu);
            for i in 0..d {
                mu.rows_mut(i * nu, nu).copy_from(&eb);
                y.rows_mut((d + i) * nu, nu).copy_from(&demos[i]);
            }
            let mut blocks = vec![priors.sigma_y.clone(); d];
            blocks.extend(vec![sigma_u.clone(); d]);
            let sdi = block_diag(&blocks).try_inverse().unwrap();
            let s0i = priors.sigma_u0.clone().try_inverse().unwrap();
            let prec = &s0i + sd.transpose() * &sdi * &sd;
            let cov = prec.try_inverse().unwrap();
            let mean = &cov * (&s0i * &priors.u0 + sd.transpose() * &sdi * (y - mu));
            let (m, c) = full_conditional_u(&ds, &beta, &sigma_u, &bs, &priors).unwrap();
            assert!((m - mean).amax() <= 1e-8 * (1.0 + m_abs(&cov)));
            assert!((c - &cov).amax() <= 1e-8 * (1.0 + m_abs(&cov)));
        }
    }

    fn m_abs(m: &DMatrix<f64>) -> f64 {
        m.amax()
    }

    #[test]
    fn sigma_u_conditional() {
        let fp = scalar_problem();
        let priors = scalar_priors(1.0, 1.0, 0.0, 1.0, 1.0);
        let ds = scalar_demos(&fp, &[2.0, 2.0]);
        let (w, nu) = full_conditional_sigma_u(&ds, &DVector::from_element(1, 2.0), &priors);
        assert_eq!(w, priors.w_u);
        assert_eq!(nu, 5.0);

        let ds = scalar_demos(&fp, &[1.0, 4.0]);
        let (w, _) = full_conditional_sigma_u(&ds, &DVector::from_element(1, 2.0), &priors);
        assert!((w[(0, 0)] - (0.1 + 1.0 + 4.0)).abs() < 1e-15);
    }

    #[test]
    fn sigma_u_posterior_mean_tracks_sample_covariance() {
        let fp = spring_damper();
        let nu = fp.n_inputs();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth = random_spd(&mut rng, nu) * 0.01;
        let u = DVector::from_fn(nu, |i, _| i as f64 * 0.1);
        let demos: Vec<_> = (0..10_000).map(|_| sample_mvn(&u, &truth, &mut rng).unwrap()).collect();
        let ds = DemoSet::new(&fp, demos).unwrap();
        let priors = Priors {
            u0: u.clone(),
            sigma_u0: DMatrix::identity(nu, nu),
            beta0: DVector::zeros(fp.n_beta()),
            sigma_beta: DMatrix::identity(fp.n_beta(), fp.n_beta()),
            w_u: DMatrix::identity(nu, nu) * 0.01,
            m_u: nu as f64 + 2.0,
            sigma_y: DMatrix::identity(nu, nu),
        };
        let (w, nu_post) = full_conditional_sigma_u(&ds, &u, &priors);
        let post_mean = w / (nu_post - nu as f64 - 1.0);
        assert!((&post_mean - &truth).norm() / truth.norm() < 0.05);
    }

    fn noiseless(fp: &ForwardProblem, d: usize) -> (DemoSet, DVector<f64>) {
        let us = forward::solve(fp, fp.theta_true.as_ref().unwrap()).unwrap().u;
        (DemoSet::new(fp, vec![us.clone(); d]).unwrap(), us)
    }

    fn sum_rule(fp: &ForwardProblem) -> NormalizationRule {
        NormalizationRule::Sum {
            value: fp.theta_true.as_ref().unwrap().sum(),
        }
    }

    #[test]
    fn gibbs_on_noiseless_demos() {
        let fp = spring_damper();
        let (ds, us) = noiseless(&fp, 5);
        let priors = Priors::from_demos(&ds, &fp, &sum_rule(&fp)).unwrap();
        let out = gibbs_run(&ds, &fp, &priors, 500, 100, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(crate::demos::rmse(&out.means.u, &us).unwrap() <= 1e-3);
        assert_eq!(out.samples.len(), 100);
        assert_eq!(out.samples[0].iteration, 401);
        for s in &out.samples {
            assert!(cholesky(&s.sigma_u).is_ok());
        }
    }

    #[test]
    fn gibbs_is_deterministic_per_seed() {
        let fp = spring_damper();
        let us = forward::solve(&fp, fp.theta_true.as_ref().unwrap()).unwrap().u;
        let sigma = crate::demos::noise_scale_from_percent(&us, 1, 10.0).unwrap();
        let ds = crate::demos::generate(&fp, &us, &crate::demos::NoiseSpec::gaussian(&sigma, 3), 5).unwrap();
        let priors = Priors::from_demos(&ds, &fp, &sum_rule(&fp)).unwrap();
        let a = gibbs_run(&ds, &fp, &priors, 50, 10, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = gibbs_run(&ds, &fp, &priors, 50, 10, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(gibbs_run(&ds, &fp, &priors, 5, 10, &mut ChaCha8Rng::seed_from_u64(4)).is_err());
    }

    #[test]
    fn trace_csv_has_one_row_per_sample() {
        let fp = spring_damper();
        let (ds, _) = noiseless(&fp, 2);
        let priors = Priors::from_demos(&ds, &fp, &sum_rule(&fp)).unwrap();
        let out = gibbs_run(&ds, &fp, &priors, 20, 7, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        out.write_trace_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 8);
        assert_eq!(lines[0].split(',').count(), 1 + fp.n_beta() + 2 * fp.n_inputs());
    }

    #[test]
    fn mh_uniform_target_always_accepts() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rw = RandomWalk::new(&DMatrix::identity(2, 2)).unwrap();
        let mut z = DVector::zeros(2);
        for _ in 0..1000 {
            let step = mh_step(&z, |_| 0.0, &rw, &mut rng).unwrap();
            assert!(step.accepted);
            z = step.next;
        }
    }

    #[test]
    fn mh_standard_normal_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rw = RandomWalk::new(&DMatrix::from_element(1, 1, 5.0)).unwrap();
        let target = |z: &DVector<f64>| -0.5 * z[0] * z[0];
        let mut z = DVector::zeros(1);
        let n = 100_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            z = mh_step(&z, target, &rw, &mut rng).unwrap().next;
            s1 += z[0];
            s2 += z[0] * z[0];
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() <= 0.02, "{mean}");
        assert!((0.95..=1.05).contains(&var), "{var}");
    }

    #[test]
    fn mh_independence_sampler_at_target_accepts_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mean = DVector::from_vec(vec![1.0, 2.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let prop = Independence::new(mean.clone(), &cov).unwrap();
        let g = Gaussian::new(&cov).unwrap();
        let target = |z: &DVector<f64>| g.log_kernel(&(z - &mean));
        let mut z = DVector::zeros(2);
        for _ in 0..1000 {
            let step = mh_step(&z, target, &prop, &mut rng).unwrap();
            assert!(step.accepted);
            z = step.next;
        }
        let step = mh_step(&z, |_| f64::NAN, &prop, &mut rng);
        assert!(step.is_err());
        let step = mh_step(&z, |x| if x == &z { 0.0 } else { f64::NAN }, &prop, &mut rng).unwrap();
        assert!(!step.accepted);
    }

    #[test]
    fn zero_scale_proposal_is_flagged() {
        let fp = spring_damper();
        let (ds, _) = noiseless(&fp, 3);
        let priors = Priors::from_demos(&ds, &fp, &sum_rule(&fp)).unwrap();
        let bs = BilinearStationarity::new(&fp);
        let cfg = ChainConfig {
            n_iter: 20,
            n_keep: 10,
            u_step: UStep::Metropolis { scale: 0.0 },
        };
        let out = run_chain(&ds, &bs, &priors, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out.acceptance_rate.u, 1.0);
        assert!(!out.warnings.is_empty());
        let first = &out.samples[0].u;
        assert!(out.samples.iter().all(|s| &s.u == first));
    }

    #[test]
    fn mh_acceptance_rate_reported() {
        let fp = spring_damper();
        let us = forward::solve(&fp, fp.theta_true.as_ref().unwrap()).unwrap().u;
        let sigma = crate::demos::noise_scale_from_percent(&us, 1, 10.0).unwrap();
        let ds = crate::demos::generate(&fp, &us, &crate::demos::NoiseSpec::gaussian(&sigma, 3), 5).unwrap();
        let priors = Priors::from_demos(&ds, &fp, &sum_rule(&fp)).unwrap();
        let bs = BilinearStationarity::new(&fp);
        let cfg = ChainConfig {
            n_iter: 400,
            n_keep: 100,
            u_step: UStep::Metropolis { scale: DEFAULT_MH_SCALE },
        };
        let out = run_chain(&ds, &bs, &priors, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(out.acceptance_rate.u > 0.0 && out.acceptance_rate.u < 1.0);
        assert!(out.warnings.is_empty());
    }
}
