//! The forward optimal-control problem: linear dynamics, quadratic features,
//! polytopic constraints, and the bilinear form of its stationarity condition.
//!
//! Inputs are stacked as `U = (u_0, …, u_{N-1})` (length `mN`). Constraint
//! multipliers are indexed `λ[k·I + i]` for `k = 0..=N`; at the terminal step
//! only the state part of a constraint is evaluated because there is no `u_N`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSystem {
    #[serde(with = "crate::io::matrix")]
    a: DMatrix<f64>,
    #[serde(with = "crate::io::matrix")]
    b: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let sys = Self { a, b };
        sys.validate()?;
        Ok(sys)
    }

    fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if n == 0 || self.b.ncols() == 0 {
            return Err(Error::Invalid("state and input dimensions must be >= 1".into()));
        }
        check_len("A columns", n, self.a.ncols())?;
        check_len("B rows", n, self.b.nrows())
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    State,
    Input,
}

/// `(coordinate - target)²` on one state or input coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFeature {
    pub kind: FeatureKind,
    pub index: usize,
    pub target: f64,
}

impl QuadraticFeature {
    pub fn state(index: usize, target: f64) -> Self {
        Self {
            kind: FeatureKind::State,
            index,
            target,
        }
    }

    pub fn input(index: usize, target: f64) -> Self {
        Self {
            kind: FeatureKind::Input,
            index,
            target,
        }
    }

    pub fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let v = match self.kind {
            FeatureKind::State => x[self.index],
            FeatureKind::Input => u[self.index],
        };
        (v - self.target).powi(2)
    }
}

/// Rows `Hx x + Hu u - h <= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopicConstraints {
    #[serde(with = "crate::io::matrix")]
    pub hx: DMatrix<f64>,
    #[serde(with = "crate::io::matrix")]
    pub hu: DMatrix<f64>,
    #[serde(with = "crate::io::vector")]
    pub h: DVector<f64>,
}

impl PolytopicConstraints {
    pub fn none(n: usize, m: usize) -> Self {
        Self {
            hx: DMatrix::zeros(0, n),
            hu: DMatrix::zeros(0, m),
            h: DVector::zeros(0),
        }
    }

    /// A single bound `u_channel <= upper`.
    pub fn input_upper(n: usize, m: usize, channel: usize, upper: f64) -> Self {
        let mut hu = DMatrix::zeros(1, m);
        hu[(0, channel)] = 1.0;
        Self {
            hx: DMatrix::zeros(1, n),
            hu,
            h: DVector::from_element(1, upper),
        }
    }

    pub fn count(&self) -> usize {
        self.h.len()
    }

    /// `g(x, u)`; pass `u = None` at the terminal step.
    pub fn eval(&self, x: &DVector<f64>, u: Option<&DVector<f64>>) -> DVector<f64> {
        let mut g = &self.hx * x - &self.h;
        if let Some(u) = u {
            g += &self.hu * u;
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardProblem {
    pub system: LinearSystem,
    pub features: Vec<QuadraticFeature>,
    pub constraints: PolytopicConstraints,
    pub horizon: usize,
    #[serde(with = "crate::io::vector")]
    pub x0: DVector<f64>,
    #[serde(default, with = "crate::io::opt_vector", skip_serializing_if = "Option::is_none")]
    pub theta_true: Option<DVector<f64>>,
}

impl ForwardProblem {
    pub fn new(
        system: LinearSystem,
        features: Vec<QuadraticFeature>,
        constraints: PolytopicConstraints,
        horizon: usize,
        x0: DVector<f64>,
    ) -> Result<Self> {
        let fp = Self {
            system,
            features,
            constraints,
            horizon,
            x0,
            theta_true: None,
        };
        fp.validate()?;
        Ok(fp)
    }

    pub fn with_theta_true(mut self, theta: DVector<f64>) -> Result<Self> {
        self.theta_true = Some(theta);
        self.validate()?;
        Ok(self)
    }

    /// Appends one `(u_c - 0)²` feature per input channel, in channel order.
    pub fn with_input_features(mut self) -> Self {
        for c in 0..self.system.m() {
            self.features.push(QuadraticFeature::input(c, 0.0));
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        let (n, m) = (self.system.n(), self.system.m());
        if self.features.is_empty() {
            return Err(Error::Invalid("at least one feature is required".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Invalid("horizon must be >= 1".into()));
        }
        for f in &self.features {
            let bound = match f.kind {
                FeatureKind::State => n,
                FeatureKind::Input => m,
            };
            if f.index >= bound {
                return Err(Error::Invalid(format!(
                    "{:?} feature index {} out of range (< {bound})",
                    f.kind, f.index
                )));
            }
        }
        let c = &self.constraints;
        check_len("Hx columns", n, c.hx.ncols())?;
        check_len("Hu columns", m, c.hu.ncols())?;
        check_len("Hu rows", c.hx.nrows(), c.hu.nrows())?;
        check_len("h", c.hx.nrows(), c.h.len())?;
        check_len("x0", n, self.x0.len())?;
        if let Some(theta) = &self.theta_true {
            check_len("theta_true", self.features.len(), theta.len())?;
            if theta.iter().any(|&t| !(t > 0.0)) {
                return Err(Error::Invalid("theta_true must be elementwise positive".into()));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.system.n()
    }

    pub fn m(&self) -> usize {
        self.system.m()
    }

    pub fn q(&self) -> usize {
        self.features.len()
    }

    /// Stacked input length `mN`.
    pub fn n_inputs(&self) -> usize {
        self.m() * self.horizon
    }

    /// Multiplier count `I (N + 1)`.
    pub fn n_multipliers(&self) -> usize {
        self.constraints.count() * (self.horizon + 1)
    }

    /// `q + I (N + 1)`.
    pub fn n_beta(&self) -> usize {
        self.q() + self.n_multipliers()
    }

    pub fn input_at(&self, u: &DVector<f64>, k: usize) -> DVector<f64> {
        let m = self.m();
        u.rows(k * m, m).into_owned()
    }

    /// Constraint values `g[k·I + i]` along the rollout of `u`.
    pub fn constraint_values(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let states = rollout(&self.system, &self.x0, u, self.horizon)?;
        let ni = self.constraints.count();
        let mut g = DVector::zeros(self.n_multipliers());
        for (k, x) in states.iter().enumerate() {
            let uk = (k < self.horizon).then(|| self.input_at(u, k));
            g.rows_mut(k * ni, ni)
                .copy_from(&self.constraints.eval(x, uk.as_ref()));
        }
        Ok(g)
    }
}

/// States `x_0 … x_N` under inputs `u`.
pub fn rollout(sys: &LinearSystem, x0: &DVector<f64>, u: &DVector<f64>, horizon: usize) -> Result<Vec<DVector<f64>>> {
    let m = sys.m();
    check_len("x0", sys.n(), x0.len())?;
    check_len("U", m * horizon, u.len())?;
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(x0.clone());
    for k in 0..horizon {
        let next = sys.a() * &states[k] + sys.b() * u.rows(k * m, m);
        states.push(next);
    }
    Ok(states)
}

/// Closed form of the rollout: `x_stack = Abar x0 + Bbar U`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedDynamics {
    pub abar: DMatrix<f64>,
    pub bbar: DMatrix<f64>,
    n: usize,
}

impl StackedDynamics {
    pub fn new(sys: &LinearSystem, horizon: usize) -> Self {
        let (n, m) = (sys.n(), sys.m());
        let mut abar = DMatrix::zeros(n * (horizon + 1), n);
        let mut bbar = DMatrix::zeros(n * (horizon + 1), m * horizon);
        abar.view_mut((0, 0), (n, n)).fill_with_identity();
        for k in 1..=horizon {
            let prev_a = abar.view(((k - 1) * n, 0), (n, n)).into_owned();
            abar.view_mut((k * n, 0), (n, n)).copy_from(&(sys.a() * prev_a));
            let prev_b = bbar.view(((k - 1) * n, 0), (n, m * horizon)).into_owned();
            let mut block = sys.a() * prev_b;
            block.view_mut((0, (k - 1) * m), (n, m)).copy_from(sys.b());
            bbar.view_mut((k * n, 0), (n, m * horizon)).copy_from(&block);
        }
        Self { abar, bbar, n }
    }

    /// Row `i` of the block for step `k` in `Bbar`.
    pub fn input_row(&self, k: usize, i: usize) -> DVector<f64> {
        self.bbar.row(k * self.n + i).transpose()
    }

    pub fn free_response(&self, k: usize, i: usize, x0: &DVector<f64>) -> f64 {
        self.abar.row(k * self.n + i).dot(&x0.transpose())
    }

    pub fn states(&self, x0: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.abar * x0 + &self.bbar * u
    }
}

/// `J(U) β = (Σ_j θ_j M_j) U + E_θ θ + J_λ λ`.
///
/// `J_λ = Gᵀ` where `g(U) = G U + g_offset` are the stacked constraint values.
#[derive(Debug, Clone)]
pub struct BilinearStationarity {
    pub mj: Vec<DMatrix<f64>>,
    pub e_theta: DMatrix<f64>,
    pub j_lambda: DMatrix<f64>,
    pub g_offset: DVector<f64>,
}

impl BilinearStationarity {
    pub fn new(fp: &ForwardProblem) -> Self {
        let (m, horizon) = (fp.m(), fp.horizon);
        let nu = fp.n_inputs();
        let sd = StackedDynamics::new(&fp.system, horizon);
        let mut mj = Vec::with_capacity(fp.q());
        let mut e_theta = DMatrix::zeros(nu, fp.q());
        for (j, f) in fp.features.iter().enumerate() {
            let mut mat = DMatrix::zeros(nu, nu);
            let mut e = DVector::zeros(nu);
            for k in 0..horizon {
                match f.kind {
                    FeatureKind::State => {
                        let s = sd.input_row(k, f.index);
                        let offset = sd.free_response(k, f.index, &fp.x0) - f.target;
                        mat += &s * s.transpose() * 2.0;
                        e += &s * (2.0 * offset);
                    }
                    FeatureKind::Input => {
                        let idx = k * m + f.index;
                        mat[(idx, idx)] += 2.0;
                        e[idx] -= 2.0 * f.target;
                    }
                }
            }
            mj.push(mat);
            e_theta.set_column(j, &e);
        }

        let ni = fp.constraints.count();
        let mut g = DMatrix::zeros(fp.n_multipliers(), nu);
        let mut g_offset = DVector::zeros(fp.n_multipliers());
        let c = &fp.constraints;
        for k in 0..=horizon {
            let bk = sd.bbar.rows(k * fp.n(), fp.n());
            let ak = sd.abar.rows(k * fp.n(), fp.n());
            let mut rows = &c.hx * bk;
            if k < horizon {
                let mut block = rows.view_mut((0, k * m), (ni, m));
                block += &c.hu;
            }
            g.rows_mut(k * ni, ni).copy_from(&rows);
            g_offset
                .rows_mut(k * ni, ni)
                .copy_from(&(&c.hx * (ak * &fp.x0) - &c.h));
        }
        Self {
            mj,
            e_theta,
            j_lambda: g.transpose(),
            g_offset,
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.e_theta.nrows()
    }

    pub fn q(&self) -> usize {
        self.mj.len()
    }

    pub fn n_multipliers(&self) -> usize {
        self.j_lambda.ncols()
    }

    pub fn n_beta(&self) -> usize {
        self.q() + self.n_multipliers()
    }

    /// `Σ_j θ_j M_j`: the Hessian of the forward objective.
    pub fn m_beta(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let nu = self.n_inputs();
        self.mj
            .iter()
            .zip(theta.iter())
            .fold(DMatrix::zeros(nu, nu), |acc, (mj, t)| acc + mj * *t)
    }

    /// `E_θ θ + J_λ λ`.
    pub fn offset(&self, theta: &DVector<f64>, lambda: &DVector<f64>) -> DVector<f64> {
        &self.e_theta * theta + &self.j_lambda * lambda
    }

    /// Columns `M_j U + E_j`: the stationarity Jacobian restricted to `θ`.
    pub fn feature_jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let mut phi = self.e_theta.clone();
        for (j, mj) in self.mj.iter().enumerate() {
            let col = phi.column(j) + mj * u;
            phi.set_column(j, &col);
        }
        phi
    }

    /// Full `J(U) = [J_θ(U), J_λ]`.
    pub fn jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let nu = self.n_inputs();
        let mut j = DMatrix::zeros(nu, self.n_beta());
        j.columns_mut(0, self.q()).copy_from(&self.feature_jacobian(u));
        j.columns_mut(self.q(), self.n_multipliers())
            .copy_from(&self.j_lambda);
        j
    }

    /// Bilinear evaluation of `J(U) β` without forming `J(U)`.
    pub fn apply(&self, u: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
        let (theta, lambda) = split_beta(beta, self.q());
        self.m_beta(&theta) * u + self.offset(&theta, &lambda)
    }

    /// `g(U) = G U + g_offset`.
    pub fn constraint_values(&self, u: &DVector<f64>) -> DVector<f64> {
        self.j_lambda.transpose() * u + &self.g_offset
    }
}

/// Splits `β = (θ, λ)`.
pub fn split_beta(beta: &DVector<f64>, q: usize) -> (DVector<f64>, DVector<f64>) {
    (
        beta.rows(0, q).into_owned(),
        beta.rows(q, beta.len() - q).into_owned(),
    )
}

pub fn join_beta(theta: &DVector<f64>, lambda: &DVector<f64>) -> DVector<f64> {
    let mut beta = DVector::zeros(theta.len() + lambda.len());
    beta.rows_mut(0, theta.len()).copy_from(theta);
    beta.rows_mut(theta.len(), lambda.len()).copy_from(lambda);
    beta
}

#[derive(Debug, Clone)]
pub struct KktResidual {
    pub stationarity: DVector<f64>,
    pub complementarity: DVector<f64>,
    pub primal_violation: DVector<f64>,
    pub dual_violation: DVector<f64>,
}

impl KktResidual {
    /// Max-abs of each block, in the order stationarity, complementarity,
    /// primal, dual.
    pub fn block_norms(&self) -> [f64; 4] {
        let inf = |v: &DVector<f64>| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        [
            inf(&self.stationarity),
            inf(&self.complementarity),
            inf(&self.primal_violation),
            inf(&self.dual_violation),
        ]
    }

    pub fn max(&self) -> f64 {
        self.block_norms().into_iter().fold(0.0, f64::max)
    }
}

/// Residuals of the forward problem's KKT system at `(θ, λ, U)`.
pub fn kkt_residual(
    fp: &ForwardProblem,
    theta: &DVector<f64>,
    lambda: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<KktResidual> {
    check_len("theta", fp.q(), theta.len())?;
    check_len("lambda", fp.n_multipliers(), lambda.len())?;
    check_len("U", fp.n_inputs(), u.len())?;
    let bs = BilinearStationarity::new(fp);
    Ok(kkt_residual_with(&bs, theta, lambda, u))
}

pub fn kkt_residual_with(
    bs: &BilinearStationarity,
    theta: &DVector<f64>,
    lambda: &DVector<f64>,
    u: &DVector<f64>,
) -> KktResidual {
    let g = bs.constraint_values(u);
    KktResidual {
        stationarity: bs.m_beta(theta) * u + bs.offset(theta, lambda),
        complementarity: lambda.component_mul(&g),
        primal_violation: g.map(|v| v.max(0.0)),
        dual_violation: lambda.map(|v| (-v).max(0.0)),
    }
}
