//! Dense linear-algebra helpers shared by the solver modules.

use crate::error::{Result, SolveError};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Operator 2-norm (largest singular value).
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Smallest singular value.
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Norm of the inverse, `1 / sigma_min`; `None` when exactly singular.
pub fn inverse_norm(m: &DMatrix<f64>) -> Option<f64> {
    let s = min_singular_value(m);
    if s > 0.0 {
        Some(1.0 / s)
    } else {
        None
    }
}

/// 2-norm condition number, `inf` when singular.
pub fn cond_2(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Max-norm of m - m^T.
pub fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Ceiling of a positive real as a saturating integer step count, at least 1.
pub fn ceil_steps(x: f64) -> u64 {
    if !x.is_finite() {
        return u64::MAX;
    }
    let c = x.ceil();
    if c < 1.0 {
        1
    } else if c >= u64::MAX as f64 {
        u64::MAX
    } else {
        c as u64
    }
}

/// Standard-normal vector of length n.
pub fn gaussian_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| standard_normal(rng))
}

/// Uniform point on the sphere of the given radius.
pub fn random_unit_vector(n: usize, radius: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let v = gaussian_vector(n, rng);
        let norm = v.norm();
        if norm > 1e-6 {
            return v * (radius / norm);
        }
    }
}

/// Random orthogonal n x n matrix: QR of a Gaussian matrix with the sign of
/// each column fixed so the factorization is unique.
pub fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| standard_normal(rng));
    let qr = a.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Random n x k matrix with orthonormal columns (uniform frame).
pub fn random_frame(n: usize, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, k, |_, _| standard_normal(rng));
    let qr = a.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q.columns(0, k).into_owned()
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on two uniforms; avoids a rand_distr dependency.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Cholesky factorization of the Gram matrix J J^T of a wide Jacobian J,
/// with a condition estimate for rank monitoring.
///
/// Both the tangent projector and the least-squares multiplier reduce to
/// solves against this Gram matrix.
pub struct GramFactor {
    jac: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    cond: f64,
}

impl GramFactor {
    /// Factorize `J J^T`. Fails with `RankDeficient` when the Gram matrix is
    /// not numerically positive definite or its condition estimate exceeds
    /// `cond_tol^2` (i.e. cond(J) > cond_tol).
    pub fn new(jac: DMatrix<f64>, cond_tol: f64) -> Result<Self> {
        let gram = &jac * jac.transpose();
        let eigs = gram.clone().symmetric_eigenvalues();
        let max = eigs.iter().cloned().fold(0.0, f64::max);
        let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        let cond = if min > 0.0 {
            (max / min).sqrt()
        } else {
            f64::INFINITY
        };
        if !(cond < cond_tol) {
            return Err(SolveError::RankDeficient { cond });
        }
        let chol = Cholesky::new(gram).ok_or(SolveError::RankDeficient { cond })?;
        Ok(Self { jac, chol, cond })
    }

    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.jac
    }

    /// Condition estimate of the Jacobian itself (square root of the Gram
    /// condition number).
    pub fn cond(&self) -> f64 {
        self.cond
    }

    /// Solve `(J J^T) w = rhs`.
    pub fn solve_gram(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    /// Apply the tangent projector: `v - J^T (J J^T)^{-1} J v`.
    pub fn project_tangent(&self, v: &DVector<f64>) -> DVector<f64> {
        let jv = &self.jac * v;
        let w = self.solve_gram(&jv);
        v - self.jac.transpose() * w
    }

    /// Least-squares multiplier: `-(J J^T)^{-1} J grad`.
    pub fn multipliers(&self, grad: &DVector<f64>) -> DVector<f64> {
        let jg = &self.jac * grad;
        -self.solve_gram(&jg)
    }
}
