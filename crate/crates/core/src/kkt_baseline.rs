//! Least-squares inverse KKT: the baseline estimator that treats the
//! demonstrations as exact regressors.
//!
//! For every demonstration the stationarity residual `J(U_d) β_d` is
//! minimized in the least-squares sense over a shared `θ` and per-demo
//! multipliers. A multiplier may be nonzero only where its constraint is
//! active at the demonstration, which turns complementarity into linear
//! constraints and the whole fit into a convex QP.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::demos::DemoSet;
use crate::error::{Error, Result};
use crate::model::{BilinearStationarity, ForwardProblem};
use crate::numerics::{solve_qp, Qp};

/// Demo constraints with `|g| <= DEMO_ACTIVE_TOL (1 + |h_i|)` count as active.
pub const DEMO_ACTIVE_TOL: f64 = 1e-6;

/// Fixes the scale of `θ`; the stationarity condition alone is homogeneous.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormalizationRule {
    /// `Σ_j θ_j = value`.
    Sum { value: f64 },
    /// `θ_index = value`.
    Component { index: usize, value: f64 },
}

impl NormalizationRule {
    pub fn row(&self, q: usize) -> Result<(DVector<f64>, f64)> {
        match *self {
            NormalizationRule::Sum { value } if value > 0.0 => Ok((DVector::from_element(q, 1.0), value)),
            NormalizationRule::Component { index, value } if index < q && value > 0.0 => {
                let mut r = DVector::zeros(q);
                r[index] = 1.0;
                Ok((r, value))
            }
            _ => Err(Error::Infeasible(format!("normalization {self:?} is not attainable with θ ≥ 0"))),
        }
    }

    /// Rescales `theta` so that it satisfies the rule.
    pub fn apply(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let (r, value) = self.row(theta.len())?;
        let current = r.dot(theta);
        if current.abs() < f64::MIN_POSITIVE {
            return Err(Error::Infeasible("cannot rescale a zero weight vector".into()));
        }
        Ok(theta * (value / current))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KktEstimate {
    #[serde(with = "crate::io::vector")]
    pub theta: DVector<f64>,
    /// Full-length multipliers (`I (N + 1)`) for every demonstration.
    #[serde(with = "crate::io::vec_of_vectors")]
    pub lambdas: Vec<DVector<f64>>,
    /// `Σ_d ‖J(U_d) β_d‖²` at the solution.
    pub residual: f64,
}

/// Multiplier indices allowed to be nonzero at `u`.
pub fn active_constraints(fp: &ForwardProblem, bs: &BilinearStationarity, u: &DVector<f64>, tol: f64) -> Vec<usize> {
    let g = bs.constraint_values(u);
    let ni = fp.constraints.count();
    (0..g.len())
        .filter(|&idx| g[idx].abs() <= tol * (1.0 + fp.constraints.h[idx % ni.max(1)].abs()))
        .collect()
}

/// `KKT(U_[1:D])`.
pub fn kkt_ls(ds: &DemoSet, fp: &ForwardProblem, norm: Option<&NormalizationRule>) -> Result<KktEstimate> {
    ds.validate_for(fp)?;
    let bs = BilinearStationarity::new(fp);
    fit(fp, &bs, &ds.demos, norm)
}

/// `KKT(U)` for a single sequence.
pub fn kkt_single(u: &DVector<f64>, fp: &ForwardProblem, norm: Option<&NormalizationRule>) -> Result<KktEstimate> {
    let bs = BilinearStationarity::new(fp);
    fit(fp, &bs, std::slice::from_ref(u), norm)
}

pub(crate) fn fit(
    fp: &ForwardProblem,
    bs: &BilinearStationarity,
    demos: &[DVector<f64>],
    norm: Option<&NormalizationRule>,
) -> Result<KktEstimate> {
    let norm = norm.ok_or(Error::MissingNormalization)?;
    let q = bs.q();
    let (norm_row, norm_value) = norm.row(q)?;
    if demos.is_empty() {
        return Err(Error::Invalid("at least one demonstration is required".into()));
    }

    let phis: Vec<DMatrix<f64>> = demos.iter().map(|u| bs.feature_jacobian(u)).collect();
    if phis.iter().all(|p| p.amax() == 0.0) {
        return Err(Error::DegenerateFeatures);
    }
    let actives: Vec<Vec<usize>> = demos
        .iter()
        .map(|u| active_constraints(fp, bs, u, DEMO_ACTIVE_TOL))
        .collect();
    let n_var = q + actives.iter().map(Vec::len).sum::<usize>();

    let mut h = DMatrix::zeros(n_var, n_var);
    let mut offset = q;
    for (phi, active) in phis.iter().zip(&actives) {
        let mut hqq = h.view_mut((0, 0), (q, q));
        hqq += phi.transpose() * phi * 2.0;
        if active.is_empty() {
            continue;
        }
        let ga = DMatrix::from_fn(bs.n_inputs(), active.len(), |r, c| bs.j_lambda[(r, active[c])]);
        let cross = phi.transpose() * &ga * 2.0;
        let na = active.len();
        h.view_mut((0, offset), (q, na)).copy_from(&cross);
        h.view_mut((offset, 0), (na, q)).copy_from(&cross.transpose());
        h.view_mut((offset, offset), (na, na))
            .copy_from(&(ga.transpose() * &ga * 2.0));
        offset += na;
    }

    let mut a_eq = DMatrix::zeros(1, n_var);
    a_eq.view_mut((0, 0), (1, q)).copy_from(&norm_row.transpose());
    let qp = Qp::new(h, DVector::zeros(n_var))
        .with_equalities(a_eq, DVector::from_element(1, norm_value))
        .with_inequalities(-DMatrix::identity(n_var, n_var), DVector::zeros(n_var));
    let sol = solve_qp(&qp, None)?.ensure_optimal()?;

    let theta = sol.z.rows(0, q).map(|t| t.max(0.0));
    let mut lambdas = Vec::with_capacity(demos.len());
    let mut offset = q;
    let mut residual = 0.0;
    for (u, active) in demos.iter().zip(&actives) {
        let mut lambda = DVector::zeros(bs.n_multipliers());
        for (k, &idx) in active.iter().enumerate() {
            lambda[idx] = sol.z[offset + k].max(0.0);
        }
        offset += active.len();
        residual += (bs.m_beta(&theta) * u + bs.offset(&theta, &lambda)).norm_squared();
        lambdas.push(lambda);
    }
    Ok(KktEstimate {
        theta,
        lambdas,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demos::{generate, rmse, NoiseSpec};
    use crate::forward;
    use crate::problems::{positivity_surrogate, spring_damper};

    fn sum_norm(fp: &ForwardProblem) -> NormalizationRule {
        NormalizationRule::Sum {
            value: fp.theta_true.as_ref().unwrap().sum(),
        }
    }

    #[test]
    fn exact_inversion_at_optimum() {
        for fp in [spring_damper(), positivity_surrogate()] {
            let theta = fp.theta_true.clone().unwrap();
            let sol = forward::solve(&fp, &theta).unwrap();
            let est = kkt_single(&sol.u, &fp, Some(&sum_norm(&fp))).unwrap();
            assert!(rmse(&est.theta, &theta).unwrap() <= 1e-6, "{}", est.theta);
            assert!(est.residual < 1e-10);
        }
    }

    #[test]
    fn component_normalization() {
        let fp = spring_damper();
        let theta = fp.theta_true.clone().unwrap();
        let sol = forward::solve(&fp, &theta).unwrap();
        let rule = NormalizationRule::Component { index: 2, value: 7.0 };
        let est = kkt_single(&sol.u, &fp, Some(&rule)).unwrap();
        assert!(rmse(&est.theta, &theta).unwrap() <= 1e-6);
    }

    #[test]
    fn multipliers_feasible_on_noisy_demos() {
        let fp = spring_damper();
        let theta = fp.theta_true.clone().unwrap();
        let us = forward::solve(&fp, &theta).unwrap().u;
        // half the demos sit exactly on the bound where the optimum does
        let mut ds = generate(&fp, &us, &NoiseSpec::gaussian(&DVector::from_element(1, 0.03), 4), 6).unwrap();
        for d in ds.demos.iter_mut().step_by(2) {
            for i in 0..d.len() {
                if us[i] >= 0.7 - 1e-12 {
                    d[i] = 0.7;
                }
            }
        }
        let est = kkt_ls(&ds, &fp, Some(&sum_norm(&fp))).unwrap();
        assert!(est.theta.min() >= 0.0);
        let bs = BilinearStationarity::new(&fp);
        for (u, lambda) in ds.demos.iter().zip(&est.lambdas) {
            assert!(lambda.min() >= 0.0);
            let g = bs.constraint_values(u);
            assert!(lambda.component_mul(&g).amax() <= 1e-9);
        }
        assert!(est.lambdas.iter().step_by(2).any(|l| l.amax() > 0.0));
    }

    #[test]
    fn requires_normalization() {
        let fp = spring_damper();
        let us = forward::solve(&fp, fp.theta_true.as_ref().unwrap()).unwrap().u;
        assert!(matches!(kkt_single(&us, &fp, None), Err(Error::MissingNormalization)));
        let bad = NormalizationRule::Component { index: 9, value: 1.0 };
        assert!(kkt_single(&us, &fp, Some(&bad)).is_err());
    }

    #[test]
    fn degenerate_features_rejected() {
        use crate::model::{LinearSystem, PolytopicConstraints, QuadraticFeature};
        let sys = LinearSystem::new(DMatrix::identity(1, 1), DMatrix::zeros(1, 1)).unwrap();
        let fp = ForwardProblem::new(
            sys,
            vec![QuadraticFeature::state(0, 1.0)],
            PolytopicConstraints::none(1, 1),
            3,
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let err = kkt_single(&DVector::zeros(3), &fp, Some(&NormalizationRule::Sum { value: 1.0 })).unwrap_err();
        assert!(matches!(err, Error::DegenerateFeatures));
    }
}
