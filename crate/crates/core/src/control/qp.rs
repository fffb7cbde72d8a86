//! Dense box-constrained convex QP:
//!
//! ```text
//! minimize ½ xᵀHx + gᵀx   subject to   lower ≤ x ≤ upper
//! ```
//!
//! Solved by gradient projection with an exact line search, followed on each
//! iteration by a Newton step on the current face (the free variables),
//! truncated at the first bound it crosses. Each face solve is a Cholesky
//! factorization of a principal submatrix of H, so once the optimal active
//! set is identified the iterate is exact up to rounding.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("invalid QP: {0}")]
    InvalidProblem(String),
    #[error("cost matrix is not positive definite")]
    Singular,
    #[error("no convergence after {iterations} iterations (KKT residual {residual:e})")]
    IterationLimit { iterations: usize, residual: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// Projected-gradient KKT residual at `x`.
    pub residual: f64,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, QpError> {
        let p = Self { h, g, lower, upper };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.g.len();
        if n == 0 {
            return Err(QpError::InvalidProblem("empty problem".into()));
        }
        if self.h.shape() != (n, n) || self.lower.len() != n || self.upper.len() != n {
            return Err(QpError::InvalidProblem("dimension mismatch".into()));
        }
        if self.h.iter().chain(self.g.iter()).any(|v| !v.is_finite()) {
            return Err(QpError::InvalidProblem("non-finite coefficients".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if (self.h[(i, j)] - self.h[(j, i)]).abs() > 1e-9 {
                    return Err(QpError::InvalidProblem(format!("H not symmetric at ({i}, {j})")));
                }
            }
            if !(self.lower[i] <= self.upper[i]) || self.lower[i].is_nan() {
                return Err(QpError::InvalidProblem(format!("lower > upper at {i}")));
            }
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .enumerate()
                .map(|(i, v)| v.clamp(self.lower[i], self.upper[i])),
        )
    }

    /// `‖x − Π(x − (Hx + g))‖∞`, zero exactly at a KKT point.
    pub fn kkt_residual(&self, x: &DVector<f64>) -> f64 {
        let grad = &self.h * x + &self.g;
        let stepped = self.project(&(x - grad));
        (x - stepped).amax()
    }
}

pub fn solve_qp(problem: &QpProblem) -> Result<QpSolution, QpError> {
    solve_qp_with(problem, &QpSettings::default())
}

pub fn solve_qp_with(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let n = problem.dim();
    let h = &problem.h;
    let g = &problem.g;

    let chol = h.clone().cholesky().ok_or(QpError::Singular)?;
    let diag_max = h.diagonal().amax();
    let pivot_min = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(pivot_min * pivot_min > diag_max * 1e-14) {
        return Err(QpError::Singular);
    }

    // Gershgorin bound on the largest eigenvalue.
    let lipschitz = (0..n)
        .map(|i| h.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);

    let mut x = problem.project(&chol.solve(&(-g)));
    let mut residual = problem.kkt_residual(&x);

    for iteration in 0..settings.max_iterations {
        if residual < settings.tolerance {
            return Ok(QpSolution {
                x,
                iterations: iteration,
                residual,
            });
        }

        // Gradient projection with exact line search along the projected arc's chord.
        let grad = h * &x + g;
        let d = problem.project(&(&x - &grad / lipschitz)) - &x;
        let curvature = d.dot(&(h * &d));
        let step = if curvature > 0.0 {
            (-grad.dot(&d) / curvature).min(1.0)
        } else {
            1.0
        };
        x = problem.project(&(&x + step * d));

        // Newton step on the face of free variables.
        let grad = h * &x + g;
        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                let at_lower = x[i] <= problem.lower[i];
                let at_upper = x[i] >= problem.upper[i];
                !(at_lower && grad[i] >= 0.0) && !(at_upper && grad[i] <= 0.0)
            })
            .collect();
        if !free.is_empty() {
            polish_face(problem, &mut x, &free)?;
        }
        residual = problem.kkt_residual(&x);
    }

    if residual < settings.tolerance {
        return Ok(QpSolution {
            x,
            iterations: settings.max_iterations,
            residual,
        });
    }
    Err(QpError::IterationLimit {
        iterations: settings.max_iterations,
        residual,
    })
}

fn polish_face(problem: &QpProblem, x: &mut DVector<f64>, free: &[usize]) -> Result<(), QpError> {
    let n = problem.dim();
    let m = free.len();
    let mut is_free = vec![false; n];
    for &i in free {
        is_free[i] = true;
    }

    let mut h_ff = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            h_ff[(a, b)] = problem.h[(i, j)];
        }
        let fixed: f64 = (0..n)
            .filter(|&j| !is_free[j])
            .map(|j| problem.h[(i, j)] * x[j])
            .sum();
        rhs[a] = -(problem.g[i] + fixed);
    }
    let target = h_ff.cholesky().ok_or(QpError::Singular)?.solve(&rhs);

    // Largest step toward the face minimizer that stays in the box.
    let mut alpha = 1.0f64;
    let mut blocking = None;
    for (a, &i) in free.iter().enumerate() {
        let dir = target[a] - x[i];
        if dir > 0.0 && x[i] + dir > problem.upper[i] {
            let r = (problem.upper[i] - x[i]) / dir;
            if r < alpha {
                alpha = r;
                blocking = Some((i, problem.upper[i]));
            }
        } else if dir < 0.0 && x[i] + dir < problem.lower[i] {
            let r = (problem.lower[i] - x[i]) / dir;
            if r < alpha {
                alpha = r;
                blocking = Some((i, problem.lower[i]));
            }
        }
    }
    for (a, &i) in free.iter().enumerate() {
        x[i] = (x[i] + alpha * (target[a] - x[i])).clamp(problem.lower[i], problem.upper[i]);
    }
    if let Some((i, bound)) = blocking {
        x[i] = bound;
    }
    Ok(())
}
