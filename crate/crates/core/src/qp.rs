//! Dense strictly convex QP, `min ½xᵀHx + gᵀx  s.t.  Ax ≤ b`, solved with a
//! primal active-set method.
//!
//! Each iteration solves the equality-constrained subproblem on the working
//! set in range-space form through Cholesky factors of `H` and of
//! `A_W H⁻¹ A_Wᵀ`. Problems here have at most a few dozen rows, so the
//! factors are rebuilt per iteration instead of updated.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub struct DenseQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl DenseQp {
    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn rows(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    /// Largest `aᵢx − bᵢ` (non-positive when feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.b).iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0)
    }

    pub fn is_feasible(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.rows() == 0 || self.max_violation(x) <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

/// Scaled KKT residuals. Stationarity is relative to the largest term in
/// `Hx + g + Aᵀλ`; the others are per-row relative to `1 + |bᵢ|`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

pub fn kkt_residuals(qp: &DenseQp, x: &DVector<f64>, lambda: &DVector<f64>) -> KktResiduals {
    let hx = &qp.h * x;
    let at_l = qp.a.transpose() * lambda;
    let grad = &hx + &qp.g + &at_l;
    let scale = 1.0f64.max(qp.g.amax()).max(hx.amax()).max(at_l.amax());
    let mut out = KktResiduals { stationarity: grad.amax() / scale, ..Default::default() };
    let ax = &qp.a * x;
    for i in 0..qp.rows() {
        let row_scale = 1.0 + qp.b[i].abs();
        let slack = qp.b[i] - ax[i];
        out.primal = out.primal.max((-slack).max(0.0) / row_scale);
        out.dual = out.dual.max((-lambda[i]).max(0.0) / (1.0 + lambda.amax()));
        out.complementarity =
            out.complementarity.max((lambda[i] * slack).abs() / (row_scale * (1.0 + lambda[i].abs())));
    }
    out
}

#[derive(Debug, Clone)]
pub struct QpResult {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub active: Vec<usize>,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt: KktResiduals,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActiveSetSolver {
    pub max_iterations: usize,
    /// Feasibility tolerance on `Ax ≤ b`.
    pub feasibility_tol: f64,
    /// Previous working set, reused when still valid.
    warm_active: Vec<usize>,
}

impl Default for ActiveSetSolver {
    fn default() -> Self {
        Self { max_iterations: 200, feasibility_tol: 1e-9, warm_active: Vec::new() }
    }
}

struct Subproblem {
    x: DVector<f64>,
    working: Vec<usize>,
    lambda_w: DVector<f64>,
    iterations: usize,
    converged: bool,
}

impl ActiveSetSolver {
    pub fn new(max_iterations: usize) -> Self {
        Self { max_iterations, ..Default::default() }
    }

    pub fn warm_active(&self) -> &[usize] {
        &self.warm_active
    }

    pub fn reset_warm_start(&mut self) {
        self.warm_active.clear();
    }

    /// Solves `qp`, starting from `x0` when it is feasible, else from zero
    /// when that is feasible, else from a phase-1 point.
    pub fn solve(&mut self, qp: &DenseQp, x0: Option<&DVector<f64>>) -> QpResult {
        let n = qp.dim();
        let tol = self.feasibility_tol;
        let zero = DVector::zeros(n);
        let start = match x0 {
            Some(x) if x.len() == n && qp.is_feasible(x, tol) => Some(x.clone()),
            _ if qp.is_feasible(&zero, tol) => Some(zero),
            _ => self.phase_one(qp),
        };
        let Some(start) = start else {
            return QpResult {
                x: DVector::zeros(n),
                lambda: DVector::zeros(qp.rows()),
                active: Vec::new(),
                status: QpStatus::Infeasible,
                iterations: 0,
                kkt: KktResiduals::default(),
            };
        };
        let Some(h_chol) = qp.h.clone().cholesky() else {
            log::error!("QP Hessian is not positive definite");
            return QpResult {
                x: start,
                lambda: DVector::zeros(qp.rows()),
                active: Vec::new(),
                status: QpStatus::Infeasible,
                iterations: 0,
                kkt: KktResiduals::default(),
            };
        };

        let warm = self.warm_active.clone();
        let sub = self.active_set(qp, &h_chol, start, &warm);
        let mut lambda = DVector::zeros(qp.rows());
        for (k, &i) in sub.working.iter().enumerate() {
            lambda[i] = sub.lambda_w[k];
        }
        let kkt = kkt_residuals(qp, &sub.x, &lambda);
        self.warm_active = sub.working.clone();
        let mut active = sub.working;
        active.sort_unstable();
        QpResult {
            x: sub.x,
            lambda,
            active,
            status: if sub.converged { QpStatus::Optimal } else { QpStatus::MaxIter },
            iterations: sub.iterations,
            kkt,
        }
    }

    fn active_set(&self, qp: &DenseQp, h_chol: &Cholesky<f64, Dyn>, mut x: DVector<f64>, warm: &[usize]) -> Subproblem {
        let tol = self.feasibility_tol;
        let mut working: Vec<usize> = Vec::new();
        let ax = &qp.a * &x;
        for &i in warm {
            if i < qp.rows() && (qp.b[i] - ax[i]).abs() <= tol && !working.contains(&i) {
                working.push(i);
                if range_space(qp, h_chol, &working).is_none() {
                    working.pop();
                }
            }
        }

        let x_scale = |x: &DVector<f64>| 1.0 + x.amax();
        let mut iterations = 0;
        let mut lambda_w = DVector::zeros(working.len());
        while iterations < self.max_iterations {
            iterations += 1;
            let grad = &qp.h * &x + &qp.g;
            let Some(eq) = range_space(qp, h_chol, &working) else {
                // Should not happen: blocking rows are independent by construction.
                log::warn!("dependent working set {working:?}; dropping last row");
                working.pop();
                continue;
            };
            let (p, lam) = eq.solve(h_chol, &grad, &working_residual(qp, &working, &x));
            // A full working set pins x; otherwise compare the step against
            // both x and the gradient it must cancel.
            let stalled = working.len() >= qp.dim()
                || p.amax() <= 1e-12 * x_scale(&x)
                || (&qp.h * &p).amax() <= 1e-11 * (1.0 + grad.amax());
            if stalled {
                lambda_w = lam;
                // Most negative multiplier leaves the working set.
                let worst = lambda_w
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| **l < -1e-12)
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(k, _)| k);
                match worst {
                    None => return Subproblem { x, working, lambda_w, iterations, converged: true },
                    Some(k) => {
                        working.remove(k);
                    }
                }
                continue;
            }

            let ap = &qp.a * &p;
            let ax = &qp.a * &x;
            let mut alpha = 1.0;
            let mut blocking = None;
            let p_norm = p.norm();
            for i in 0..qp.rows() {
                // Rows dependent on the working set see only roundoff here.
                if working.contains(&i) || ap[i] <= 1e-9 * qp.a.row(i).norm() * p_norm {
                    continue;
                }
                let slack = (qp.b[i] - ax[i]).max(0.0);
                let step = slack / ap[i];
                if step < alpha {
                    alpha = step;
                    blocking = Some(i);
                }
            }
            x += alpha * &p;
            if let Some(i) = blocking {
                working.push(i);
            }
        }
        // Best feasible iterate so far; multipliers from the last working set.
        if let Some(eq) = range_space(qp, h_chol, &working) {
            let grad = &qp.h * &x + &qp.g;
            lambda_w = eq.solve(h_chol, &grad, &working_residual(qp, &working, &x)).1;
        }
        Subproblem {
            x,
            lambda_w: lambda_w.resize_vertically(working.len(), 0.0),
            working,
            iterations,
            converged: false,
        }
    }

    /// Feasible point from `min t + ε/2(‖x‖² + t²)  s.t.  Ax − t ≤ b, t ≥ 0`.
    fn phase_one(&self, qp: &DenseQp) -> Option<DVector<f64>> {
        let (n, m) = (qp.dim(), qp.rows());
        let eps = 1e-8;
        let mut a = DMatrix::zeros(m + 1, n + 1);
        a.view_mut((0, 0), (m, n)).copy_from(&qp.a);
        for i in 0..m {
            a[(i, n)] = -1.0;
        }
        a[(m, n)] = -1.0;
        let mut b = DVector::zeros(m + 1);
        b.rows_mut(0, m).copy_from(&qp.b);
        let mut g = DVector::zeros(n + 1);
        g[n] = 1.0;
        let aux = DenseQp { h: DMatrix::identity(n + 1, n + 1) * eps, g, a, b };
        let t0 = (-qp.b.min()).max(0.0) + 1.0;
        let mut start = DVector::zeros(n + 1);
        start[n] = t0;
        let h_chol = aux.h.clone().cholesky()?;
        let mut inner = self.clone();
        inner.max_iterations = self.max_iterations.max(4 * (n + m));
        let sub = inner.active_set(&aux, &h_chol, start, &[]);
        let x = sub.x.rows(0, n).into_owned();
        if qp.is_feasible(&x, self.feasibility_tol.max(1e-7)) {
            Some(x)
        } else {
            log::debug!("phase one ended at t = {}", sub.x[n]);
            None
        }
    }
}

fn working_residual(qp: &DenseQp, working: &[usize], x: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(working.len(), working.iter().map(|&i| qp.b[i] - qp.a.row(i).dot(&x.transpose())))
}

/// Range-space factors for a working set: `S = A_W H⁻¹ A_Wᵀ`.
struct RangeSpace {
    a_w: DMatrix<f64>,
    s_chol: Option<Cholesky<f64, Dyn>>,
}

fn range_space(qp: &DenseQp, h_chol: &Cholesky<f64, Dyn>, working: &[usize]) -> Option<RangeSpace> {
    let n = qp.dim();
    if working.is_empty() {
        return Some(RangeSpace { a_w: DMatrix::zeros(0, n), s_chol: None });
    }
    let a_w = DMatrix::from_fn(working.len(), n, |r, c| qp.a[(working[r], c)]);
    let hinv_at = h_chol.solve(&a_w.transpose());
    let s = &a_w * &hinv_at;
    let s_scale = s.diagonal().amax().max(f64::MIN_POSITIVE);
    let chol = s.cholesky()?;
    let min_pivot = chol.l_dirty().diagonal().iter().map(|d| d.abs()).fold(f64::INFINITY, f64::min);
    if min_pivot * min_pivot < 1e-12 * s_scale {
        return None;
    }
    Some(RangeSpace { a_w, s_chol: Some(chol) })
}

impl RangeSpace {
    /// Step `p` and multipliers `λ` of `min ½pᵀHp + gradᵀp  s.t.  A_W p = r`.
    /// A nonzero `r` pulls working rows back onto their boundary.
    fn solve(
        &self,
        h_chol: &Cholesky<f64, Dyn>,
        grad: &DVector<f64>,
        r: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let hinv_g = h_chol.solve(grad);
        match &self.s_chol {
            None => (-hinv_g, DVector::zeros(0)),
            Some(s) => {
                let lambda = s.solve(&(-(&self.a_w * &hinv_g) - r));
                let p = -h_chol.solve(&(grad + self.a_w.transpose() * &lambda));
                (p, lambda)
            }
        }
    }
}
