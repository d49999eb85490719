//! Strictly convex quadratic programs
//!
//! ```text
//!     minimize     ½ zᵀ H z + cᵀ z
//!     subject to   Aeq z  = beq
//!                  Ain z <= bin
//! ```
//!
//! solved with the dual active-set method of Goldfarb and Idnani. The dual
//! method starts from the unconstrained minimizer, so no phase-one feasibility
//! search is needed and infeasibility is detected exactly. Working-set
//! projections are recomputed from a QR factorization of `L⁻¹ N` at every
//! step, which is cheap at the sizes this crate deals with.

use nalgebra::{DMatrix, DVector};

use super::linalg::{cholesky_regularized, solve_lower, solve_upper_transpose};
use crate::error::{Error, Result};

/// A constraint with `|Ain_i z - bin_i| <= ACTIVE_TOL * (1 + |bin_i|)` is weakly
/// active.
pub const ACTIVE_TOL: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct Qp {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl Qp {
    /// Unconstrained problem in `n` variables.
    pub fn new(h: DMatrix<f64>, c: DVector<f64>) -> Self {
        let n = c.len();
        Self {
            h,
            c,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.c.dot(z)
    }

    /// `Hz + c + Aeqᵀ ν + Ainᵀ μ`.
    pub fn stationarity(&self, z: &DVector<f64>, nu: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
        &self.h * z + &self.c + self.a_eq.transpose() * nu + self.a_in.transpose() * mu
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim();
        let dims = [
            ("H rows", self.h.nrows()),
            ("H cols", self.h.ncols()),
            ("Aeq cols", self.a_eq.ncols()),
            ("Ain cols", self.a_in.ncols()),
        ];
        for (name, got) in dims {
            if got != n {
                return Err(Error::Dimension {
                    name,
                    expected: n,
                    got,
                });
            }
        }
        crate::error::check_len("beq", self.a_eq.nrows(), self.b_eq.len())?;
        crate::error::check_len("bin", self.a_in.nrows(), self.b_in.len())?;
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > 1e-10 * (1.0 + self.h.amax()) {
            return Err(Error::Invalid(format!("QP Hessian is not symmetric ({asym:e})")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Indices of the binding inequalities (the final working set), ascending.
    pub active_set: Vec<usize>,
    /// Equality duals `ν`.
    pub eq_multipliers: DVector<f64>,
    /// Inequality duals `μ ≥ 0`, zero off the active set.
    pub in_multipliers: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
}

impl QpSolution {
    /// Maps a non-optimal status onto the matching error.
    pub fn ensure_optimal(self) -> Result<Self> {
        match self.status {
            QpStatus::Optimal => Ok(self),
            QpStatus::Infeasible => Err(Error::Infeasible(format!(
                "no point satisfies the constraints (working set {:?})",
                self.active_set
            ))),
            QpStatus::IterationLimit => Err(Error::IterationLimit(self.iterations)),
        }
    }

    /// Inequalities within [`ACTIVE_TOL`] of their bound, whether or not they
    /// carry a multiplier.
    pub fn weakly_active(&self, qp: &Qp) -> Vec<usize> {
        let g = &qp.a_in * &self.z - &qp.b_in;
        (0..g.len())
            .filter(|&i| g[i].abs() <= ACTIVE_TOL * (1.0 + qp.b_in[i].abs()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Row {
    Eq(usize),
    In(usize),
}

struct Solver<'a> {
    qp: &'a Qp,
    l: DMatrix<f64>,
    // L⁻¹ nᵢ for every constraint normal in `n·z >= b` form: equalities first.
    scaled: DMatrix<f64>,
    normals: DMatrix<f64>,
    rhs: DVector<f64>,
    n_eq: usize,
    x: DVector<f64>,
    working: Vec<Row>,
    u: Vec<f64>,
    iterations: usize,
    max_iterations: usize,
}

enum Added {
    Yes,
    Dependent,
}

impl<'a> Solver<'a> {
    fn new(qp: &'a Qp) -> Result<Self> {
        let n = qp.dim();
        let l = cholesky_regularized(&qp.h)?;
        let n_eq = qp.a_eq.nrows();
        let n_in = qp.a_in.nrows();
        let mut normals = DMatrix::zeros(n, n_eq + n_in);
        let mut rhs = DVector::zeros(n_eq + n_in);
        for i in 0..n_eq {
            normals.set_column(i, &qp.a_eq.row(i).transpose());
            rhs[i] = qp.b_eq[i];
        }
        for i in 0..n_in {
            normals.set_column(n_eq + i, &(-qp.a_in.row(i).transpose()));
            rhs[n_eq + i] = -qp.b_in[i];
        }
        let mut scaled = DMatrix::zeros(n, n_eq + n_in);
        for j in 0..(n_eq + n_in) {
            scaled.set_column(j, &solve_lower(&l, &normals.column(j).into_owned()));
        }
        let x = -solve_upper_transpose(&l, &solve_lower(&l, &qp.c));
        Ok(Self {
            qp,
            l,
            scaled,
            normals,
            rhs,
            n_eq,
            x,
            working: Vec::new(),
            u: Vec::new(),
            iterations: 0,
            max_iterations: 100 * n.max(1),
        })
    }

    fn col(&self, row: Row) -> usize {
        match row {
            Row::Eq(i) => i,
            Row::In(i) => self.n_eq + i,
        }
    }

    fn slack(&self, row: Row) -> f64 {
        let j = self.col(row);
        self.normals.column(j).dot(&self.x) - self.rhs[j]
    }

    fn violation_tol(&self, row: Row) -> f64 {
        let j = self.col(row);
        1e-11 * (1.0 + self.rhs[j].abs() + self.normals.column(j).norm() * self.x.norm())
    }

    /// Primal direction `z` and dual direction `r` for adding `row`, plus
    /// `zᵀ n` (zero when `row` is linearly dependent on the working set).
    fn directions(&self, row: Row) -> (DVector<f64>, DVector<f64>, f64) {
        let d = self.scaled.column(self.col(row)).into_owned();
        let q = self.working.len();
        if q == 0 {
            let z = solve_upper_transpose(&self.l, &d);
            let znp = d.norm_squared();
            return (z, DVector::zeros(0), znp);
        }
        let mut b = DMatrix::zeros(d.len(), q);
        for (k, &w) in self.working.iter().enumerate() {
            b.set_column(k, &self.scaled.column(self.col(w)));
        }
        let qr = b.qr();
        let q1 = qr.q();
        let r_mat = qr.r();
        let coeff = q1.transpose() * &d;
        let w = &d - &q1 * &coeff;
        // back substitution R r = Q1ᵀ d
        let mut r = coeff.clone();
        for i in (0..q).rev() {
            let mut s = r[i];
            for k in (i + 1)..q {
                s -= r_mat[(i, k)] * r[k];
            }
            r[i] = s / r_mat[(i, i)];
        }
        let dependent = w.norm() <= 1e-9 * d.norm().max(f64::MIN_POSITIVE);
        if dependent {
            (DVector::zeros(d.len()), r, 0.0)
        } else {
            let znp = w.norm_squared();
            (solve_upper_transpose(&self.l, &w), r, znp)
        }
    }

    /// Adds an equality-type row with a full (possibly negative) step.
    fn add_as_equality(&mut self, row: Row) -> Added {
        let (z, r, znp) = self.directions(row);
        let s = self.slack(row);
        if znp == 0.0 {
            return Added::Dependent;
        }
        let t = -s / znp;
        self.x += &z * t;
        for (uk, rk) in self.u.iter_mut().zip(r.iter()) {
            *uk -= t * rk;
        }
        self.working.push(row);
        self.u.push(t);
        Added::Yes
    }

    fn most_violated(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.qp.a_in.nrows() {
            let row = Row::In(i);
            if self.working.contains(&row) {
                continue;
            }
            let s = self.slack(row);
            if s < -self.violation_tol(row) && best.map_or(true, |(_, bs)| s < bs) {
                best = Some((i, s));
            }
        }
        best.map(|(i, _)| i)
    }

    fn run_inequalities(&mut self) -> QpStatus {
        while let Some(p) = self.most_violated() {
            let row = Row::In(p);
            let mut u_new = 0.0;
            loop {
                self.iterations += 1;
                if self.iterations > self.max_iterations {
                    return QpStatus::IterationLimit;
                }
                let (z, r, znp) = self.directions(row);
                let mut t1 = f64::INFINITY;
                let mut drop: Option<usize> = None;
                for (k, &w) in self.working.iter().enumerate() {
                    if matches!(w, Row::In(_)) && r[k] > 1e-14 {
                        let ratio = self.u[k] / r[k];
                        if ratio < t1 {
                            t1 = ratio;
                            drop = Some(k);
                        }
                    }
                }
                let t2 = if znp > 0.0 {
                    (-self.slack(row) / znp).max(0.0)
                } else {
                    f64::INFINITY
                };
                let t = t1.min(t2);
                if t.is_infinite() {
                    return QpStatus::Infeasible;
                }
                if t2.is_finite() {
                    self.x += &z * t;
                }
                for (uk, rk) in self.u.iter_mut().zip(r.iter()) {
                    *uk -= t * rk;
                }
                u_new += t;
                if t2 <= t1 {
                    self.working.push(row);
                    self.u.push(u_new);
                    break;
                }
                let k = drop.expect("partial step implies a blocking multiplier");
                self.working.remove(k);
                self.u.remove(k);
            }
        }
        QpStatus::Optimal
    }

    fn add_equalities(&mut self) -> QpStatus {
        for i in 0..self.n_eq {
            let row = Row::Eq(i);
            if let Added::Dependent = self.add_as_equality(row) {
                if self.slack(row).abs() > self.violation_tol(row).max(1e-9) {
                    return QpStatus::Infeasible;
                }
            }
        }
        QpStatus::Optimal
    }

    fn finish(self, status: QpStatus) -> QpSolution {
        let n_in = self.qp.a_in.nrows();
        let mut eq_multipliers = DVector::zeros(self.n_eq);
        let mut in_multipliers = DVector::zeros(n_in);
        let mut active_set = Vec::new();
        for (w, u) in self.working.iter().zip(self.u.iter()) {
            match *w {
                Row::Eq(i) => eq_multipliers[i] = -u,
                Row::In(i) => {
                    in_multipliers[i] = *u;
                    active_set.push(i);
                }
            }
        }
        active_set.sort_unstable();
        QpSolution {
            z: self.x,
            active_set,
            eq_multipliers,
            in_multipliers,
            status,
            iterations: self.iterations,
        }
    }
}

/// Solves a strictly convex QP.
///
/// `warm_start` is a guess of the binding inequalities. The guess is tried
/// first as an equality-constrained problem; it is accepted only when it is
/// primal feasible with nonnegative duals, otherwise the solve restarts cold.
/// Either way the returned minimizer is the unique global one.
pub fn solve_qp(qp: &Qp, warm_start: Option<&[usize]>) -> Result<QpSolution> {
    qp.validate()?;
    // The solver's pivot thresholds are absolute, so solve with unit-scale
    // curvature; the minimizer is unchanged and the duals scale back.
    let scale = qp.h.diagonal().amax();
    if scale.is_finite() && scale > 0.0 && scale != 1.0 {
        let unit = Qp {
            h: &qp.h / scale,
            c: &qp.c / scale,
            ..qp.clone()
        };
        let mut sol = solve_unit(&unit, warm_start)?;
        sol.eq_multipliers *= scale;
        sol.in_multipliers *= scale;
        return Ok(sol);
    }
    solve_unit(qp, warm_start)
}

fn solve_unit(qp: &Qp, warm_start: Option<&[usize]>) -> Result<QpSolution> {
    if let Some(guess) = warm_start {
        if let Some(sol) = try_warm(qp, guess)? {
            return Ok(sol);
        }
    }
    let mut solver = Solver::new(qp)?;
    let status = solver.add_equalities();
    if status != QpStatus::Optimal {
        return Ok(solver.finish(status));
    }
    let status = solver.run_inequalities();
    Ok(solver.finish(status))
}

fn try_warm(qp: &Qp, guess: &[usize]) -> Result<Option<QpSolution>> {
    let mut solver = Solver::new(qp)?;
    if solver.add_equalities() != QpStatus::Optimal {
        return Ok(None);
    }
    let mut seen = Vec::with_capacity(guess.len());
    for &i in guess {
        if i >= qp.a_in.nrows() || seen.contains(&i) {
            continue;
        }
        seen.push(i);
        if let Added::Dependent = solver.add_as_equality(Row::In(i)) {
            return Ok(None);
        }
    }
    let dual_ok = solver
        .working
        .iter()
        .zip(solver.u.iter())
        .all(|(w, u)| matches!(w, Row::Eq(_)) || *u >= 0.0);
    if !dual_ok || solver.most_violated().is_some() {
        return Ok(None);
    }
    Ok(Some(solver.finish(QpStatus::Optimal)))
}
