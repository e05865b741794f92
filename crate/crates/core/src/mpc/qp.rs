//! Bound-constrained convex QP: `min 1/2 x'Hx + g'x  s.t.  lb <= x <= ub`.
//!
//! Gradient projection identifies the active set; a Newton step on the free
//! variables then finishes the subspace problem (Moré–Toraldo style). Every
//! accepted step decreases the objective, so the history is monotone even
//! when `H` is only semidefinite. Bounds may be infinite.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct BoxQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum QpStatus {
    Optimal,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpResult {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// `||x - P(x - grad)||_inf` at the returned point.
    pub kkt_residual: f64,
    pub status: QpStatus,
    /// Objective after each iteration, starting with the initial point.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("dimension mismatch")]
    Dimension,
    #[error("lower bound exceeds upper bound at index {0}")]
    InvertedBounds(usize),
    #[error("non-finite problem data")]
    NonFinite,
}

impl BoxQp {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, lb: DVector<f64>, ub: DVector<f64>) -> Result<Self, QpError> {
        let n = g.len();
        if h.nrows() != n || h.ncols() != n || lb.len() != n || ub.len() != n {
            return Err(QpError::Dimension);
        }
        if h.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite);
        }
        for i in 0..n {
            if lb[i].is_nan() || ub[i].is_nan() {
                return Err(QpError::NonFinite);
            }
            if lb[i] > ub[i] {
                return Err(QpError::InvertedBounds(i));
            }
        }
        Ok(Self { h, g, lb, ub })
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h * x + &self.g
    }

    pub fn project(&self, x: &mut DVector<f64>) {
        for i in 0..x.len() {
            x[i] = x[i].clamp(self.lb[i], self.ub[i]);
        }
    }

    pub fn kkt_residual(&self, x: &DVector<f64>) -> f64 {
        let grad = self.gradient(x);
        (0..x.len())
            .map(|i| (x[i] - (x[i] - grad[i]).clamp(self.lb[i], self.ub[i])).abs())
            .fold(0.0, f64::max)
    }
}

pub fn solve_box_qp(qp: &BoxQp, max_iter: usize, tol: f64) -> QpResult {
    let mut x0 = DVector::zeros(qp.dim());
    qp.project(&mut x0);
    solve_box_qp_from(qp, x0, max_iter, tol)
}

/// Same as [`solve_box_qp`] from a given start (projected onto the box first).
pub fn solve_box_qp_from(qp: &BoxQp, mut x: DVector<f64>, max_iter: usize, tol: f64) -> QpResult {
    let n = qp.dim();
    qp.project(&mut x);
    let mut f = qp.objective(&x);
    let mut history = alloc::vec![f];
    // Gershgorin bound on the largest eigenvalue: a safe gradient step.
    let lip = (0..n)
        .map(|i| qp.h.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(1e-300);

    let mut iterations = 0;
    let mut status = QpStatus::MaxIter;
    loop {
        let grad = qp.gradient(&x);
        let residual = pg_residual(qp, &x, &grad);
        if residual <= tol {
            status = QpStatus::Optimal;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        // Projected gradient with Armijo backtracking from the Cauchy step.
        let mut dir = -&grad;
        for i in 0..n {
            if (x[i] <= qp.lb[i] && dir[i] < 0.0) || (x[i] >= qp.ub[i] && dir[i] > 0.0) {
                dir[i] = 0.0;
            }
        }
        let curv = dir.dot(&(&qp.h * &dir));
        let mut alpha = if curv > 0.0 { dir.norm_squared() / curv } else { 1.0 / lip };
        if !alpha.is_finite() || alpha <= 0.0 {
            alpha = 1.0 / lip;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = &x - &grad * alpha;
            qp.project(&mut trial);
            let ft = qp.objective(&trial);
            let decrease = grad.dot(&(&trial - &x));
            if ft <= f + 1e-4 * decrease && ft <= f {
                x = trial;
                f = ft;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }

        // Newton step on the variables strictly inside their bounds.
        let grad = qp.gradient(&x);
        let free: Vec<usize> = (0..n).filter(|&i| x[i] > qp.lb[i] && x[i] < qp.ub[i]).collect();
        if !free.is_empty() {
            if let Some(step) = newton_step(qp, &free, &grad) {
                let mut t = 1.0;
                for _ in 0..30 {
                    let mut trial = x.clone();
                    for (k, &i) in free.iter().enumerate() {
                        trial[i] += t * step[k];
                    }
                    qp.project(&mut trial);
                    let ft = qp.objective(&trial);
                    let decrease = grad.dot(&(&trial - &x));
                    if ft <= f + 1e-4 * decrease && ft <= f {
                        x = trial;
                        f = ft;
                        accepted = true;
                        break;
                    }
                    t *= 0.5;
                }
            }
        }
        history.push(f);
        if !accepted {
            // No progress possible at working precision.
            break;
        }
    }
    let kkt_residual = qp.kkt_residual(&x);
    if kkt_residual <= tol {
        status = QpStatus::Optimal;
    }
    QpResult {
        x,
        objective: f,
        iterations,
        kkt_residual,
        status,
        history,
    }
}

fn pg_residual(qp: &BoxQp, x: &DVector<f64>, grad: &DVector<f64>) -> f64 {
    (0..x.len())
        .map(|i| (x[i] - (x[i] - grad[i]).clamp(qp.lb[i], qp.ub[i])).abs())
        .fold(0.0, f64::max)
}

/// Solves `H_FF d = -grad_F`, shifting the diagonal until Cholesky succeeds.
fn newton_step(qp: &BoxQp, free: &[usize], grad: &DVector<f64>) -> Option<DVector<f64>> {
    let m = free.len();
    let mut sub = DMatrix::zeros(m, m);
    let mut scale: f64 = 0.0;
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            sub[(a, b)] = qp.h[(i, j)];
        }
        scale = scale.max(qp.h[(i, i)].abs());
    }
    let rhs = DVector::from_iterator(m, free.iter().map(|&i| -grad[i]));
    let mut shift = 0.0;
    for _ in 0..8 {
        let mut shifted = sub.clone();
        for a in 0..m {
            shifted[(a, a)] += shift;
        }
        if let Some(chol) = shifted.cholesky() {
            let d = chol.solve(&rhs);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        shift = if shift == 0.0 { 1e-12 * scale.max(1e-12) } else { shift * 100.0 };
    }
    None
}
