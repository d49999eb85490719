#![allow(dead_code)]

use ioc_eiv::demos::DemoSet;
use ioc_eiv::forward;
use ioc_eiv::mcmc::Priors;
use ioc_eiv::model::{ForwardProblem, LinearSystem, PolytopicConstraints, QuadraticFeature};
use ioc_eiv::numerics::Qp;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Strictly convex QP in at most 8 variables with at most 6 constraints,
/// feasible by construction (constraints hold with slack at a random point).
pub fn random_qp<R: Rng>(rng: &mut R) -> Qp {
    let n = rng.random_range(1..=8);
    let k = rng.random_range(0..=6usize);
    let n_eq = if n > 1 { rng.random_range(0..=k.min(n - 1).min(2)) } else { 0 };
    let n_in = k - n_eq;
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &m * m.transpose() + DMatrix::identity(n, n) * 0.5;
    let c = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let z0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let a_eq = DMatrix::from_fn(n_eq, n, |_, _| rng.random_range(-1.0..1.0));
    let b_eq = &a_eq * &z0;
    let a_in = DMatrix::from_fn(n_in, n, |_, _| rng.random_range(-1.0..1.0));
    let slack = DVector::from_fn(n_in, |_, _| rng.random_range(0.0..0.5));
    let b_in = &a_in * &z0 + slack;
    Qp::new(h, c).with_equalities(a_eq, b_eq).with_inequalities(a_in, b_in)
}

/// Optimal value by accelerated projected gradient on the dual
/// `max_{ν, μ >= 0} -½ (c + Aᵀy)ᵀ H⁻¹ (c + Aᵀy) - bᵀy`; only `μ` is projected.
/// Any dual value is a lower bound on the primal optimum.
pub fn dual_projected_gradient(qp: &Qp, iters: usize) -> f64 {
    let n = qp.dim();
    let (ne, ni) = (qp.a_eq.nrows(), qp.a_in.nrows());
    let mut a = DMatrix::zeros(ne + ni, n);
    a.rows_mut(0, ne).copy_from(&qp.a_eq);
    a.rows_mut(ne, ni).copy_from(&qp.a_in);
    let mut b = DVector::zeros(ne + ni);
    b.rows_mut(0, ne).copy_from(&qp.b_eq);
    b.rows_mut(ne, ni).copy_from(&qp.b_in);
    let hinv = qp.h.clone().try_inverse().expect("H is invertible");
    let dual = |y: &DVector<f64>| {
        let r = &qp.c + a.transpose() * y;
        -0.5 * r.dot(&(&hinv * &r)) - b.dot(y)
    };
    if ne + ni == 0 {
        return dual(&DVector::zeros(0));
    }
    let q = &a * &hinv * a.transpose();
    let lip = q.symmetric_eigenvalues().amax().max(1e-12);
    let project = |y: &mut DVector<f64>| {
        for i in ne..ne + ni {
            y[i] = y[i].max(0.0);
        }
    };
    let grad = |y: &DVector<f64>| -(&a * (&hinv * (&qp.c + a.transpose() * y))) - &b;
    let mut y = DVector::zeros(ne + ni);
    let mut v = y.clone();
    let mut t = 1.0f64;
    let mut best = dual(&y);
    for _ in 0..iters {
        let mut next = &v + grad(&v) / lip;
        project(&mut next);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        v = &next + (&next - &y) * ((t - 1.0) / t_next);
        // restart on non-monotone progress
        let val = dual(&next);
        if val < best {
            v = next.clone();
            t = 1.0;
        } else {
            t = t_next;
        }
        best = best.max(val);
        y = next;
    }
    best
}

/// A random stable two-state, single-input problem whose input bound binds at
/// the true weights.
pub fn random_problem<R: Rng>(rng: &mut R) -> ForwardProblem {
    let angle: f64 = rng.random_range(-0.4..0.4);
    let radius = rng.random_range(0.7..0.98);
    let a = DMatrix::from_row_slice(
        2,
        2,
        &[radius * angle.cos(), -radius * angle.sin(), radius * angle.sin(), radius * angle.cos()],
    );
    let b = DMatrix::from_fn(2, 1, |_, _| rng.random_range(0.2..1.0));
    let sys = LinearSystem::new(a, b).unwrap();
    let features = vec![
        QuadraticFeature::state(0, rng.random_range(1.0..3.0)),
        QuadraticFeature::state(1, rng.random_range(-0.5..0.5)),
    ];
    let horizon = rng.random_range(4..=8);
    let x0 = DVector::from_fn(2, |_, _| rng.random_range(-0.5..0.5));
    let theta = DVector::from_fn(3, |_, _| rng.random_range(0.5..5.0));
    let free = ForwardProblem::new(sys.clone(), features.clone(), PolytopicConstraints::none(2, 1), horizon, x0.clone())
        .unwrap()
        .with_input_features();
    let peak = forward::solve(&free, &theta).unwrap().u.max();
    let bound = if peak > 0.0 { 0.8 * peak } else { 0.5 * peak.abs() + 0.1 };
    ForwardProblem::new(sys, features, PolytopicConstraints::input_upper(2, 1, 0, bound), horizon, x0)
        .unwrap()
        .with_input_features()
        .with_theta_true(theta)
        .unwrap()
}

/// `min_u θ (u - 1)²`, one step, one input: `J(U)β = 2θ(u - 1)`.
pub fn scalar_problem(upper: Option<f64>) -> ForwardProblem {
    let sys = LinearSystem::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
    let cons = match upper {
        Some(c) => PolytopicConstraints::input_upper(1, 1, 0, c),
        None => PolytopicConstraints::none(1, 1),
    };
    ForwardProblem::new(sys, vec![QuadraticFeature::input(0, 1.0)], cons, 1, DVector::zeros(1)).unwrap()
}

pub fn scalar_demos(fp: &ForwardProblem, values: &[f64]) -> DemoSet {
    DemoSet::new(fp, values.iter().map(|&v| DVector::from_element(1, v)).collect()).unwrap()
}

pub fn diag_priors(u0: &[f64], s_u0: f64, beta0: &[f64], s_beta: f64, s_y: f64) -> Priors {
    let (nu, nb) = (u0.len(), beta0.len());
    Priors {
        u0: DVector::from_row_slice(u0),
        sigma_u0: DMatrix::identity(nu, nu) * s_u0,
        beta0: DVector::from_row_slice(beta0),
        sigma_beta: DMatrix::identity(nb, nb) * s_beta,
        w_u: DMatrix::identity(nu, nu) * 0.1,
        m_u: nu as f64 + 2.0,
        sigma_y: DMatrix::identity(nu, nu) * s_y,
    }
}

/// Total variation between the grid-normalized density `exp(log_density)` and
/// `N(mean, var)`.
pub fn grid_tv(log_density: impl Fn(f64) -> f64, mean: f64, var: f64) -> f64 {
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

/// Mean and batch-means Monte Carlo standard error.
pub fn mean_and_mcse(x: &[f64], batches: usize) -> (f64, f64) {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let size = n / batches;
    let bm: Vec<f64> = (0..batches)
        .map(|b| x[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let var = bm.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}
