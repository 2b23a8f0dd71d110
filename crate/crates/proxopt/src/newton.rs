//! Phase 2: modified Newton method on F(z) = 0 with the factorization of
//! F'(z0) frozen at the handoff point, plus the Kantorovich-style basin
//! certificate h = L_{1,F} K ||F'(z0)^{-1}|| < 1/4.

use crate::error::{Result, SolveError};
use crate::kkt::{kkt_matrix, kkt_residual, stationarity_residual, KktPoint, ObjectiveMap};
use crate::manifold::{self, ConstraintMap};
use crate::tolerances::{BASIN_MARGIN, RATE_SLACK};
use crate::trace::{IterationTrace, Phase, TraceRow};
use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::Serialize;

pub use crate::ledger::n2_bound;

/// Convergence certificate for the modified Newton method at a start z0.
#[derive(Debug, Clone, Serialize)]
pub struct BasinCertificate {
    /// K = ||F'(z0)^{-1} F(z0)||, the Newton decrement norm.
    pub k_norm: f64,
    /// ||F'(z0)^{-1}|| (operator 2-norm).
    pub inv_norm: f64,
    /// Lipschitz constant of F' used for the check.
    pub l1f: f64,
    /// h = L1F * K * ||F'(z0)^{-1}||.
    pub h: f64,
    /// Smaller root of h t^2 - t + 1 = 0; 1 at h = 0, 2 at h = 1/4,
    /// undefined beyond.
    pub t0: Option<f64>,
    /// Radius r = K t0 of the ball around z0 holding the unique solution.
    pub r: Option<f64>,
    /// Strict inequality h < 1/4 (minus the configured margin).
    pub certified: bool,
}

impl BasinCertificate {
    pub fn from_parts(k_norm: f64, inv_norm: f64, l1f: f64, margin: f64) -> Self {
        let h = l1f * k_norm * inv_norm;
        let (t0, r) = if h <= 0.25 {
            // rationalized smaller root, stable near h = 0
            let t0 = 2.0 / (1.0 + (1.0 - 4.0 * h).sqrt());
            (Some(t0), Some(k_norm * t0))
        } else {
            (None, None)
        };
        Self {
            k_norm,
            inv_norm,
            l1f,
            h,
            t0,
            r,
            certified: h < 0.25 - margin,
        }
    }
}

/// Evaluate the basin certificate at z0. Fails with `SingularJacobian` when
/// F'(z0) is numerically singular.
pub fn basin_check(
    obj: &ObjectiveMap,
    c: &ConstraintMap,
    z0: &KktPoint,
    l1f: f64,
) -> Result<BasinCertificate> {
    let fp = kkt_matrix(obj, c, z0);
    let sv = fp.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if !(cond < c.tolerances().cond_tol) {
        return Err(SolveError::SingularJacobian { cond });
    }
    let inv_norm = 1.0 / smin;
    let f0 = kkt_residual(obj, c, z0);
    let k_norm = fp
        .lu()
        .solve(&f0)
        .ok_or(SolveError::SingularJacobian { cond })?
        .norm();
    Ok(BasinCertificate::from_parts(
        k_norm,
        inv_norm,
        l1f,
        BASIN_MARGIN,
    ))
}

/// The factorization of F'(z0), computed once and reused by every step.
pub struct FrozenKkt {
    lu: LU<f64, Dyn, Dyn>,
    n: usize,
}

impl FrozenKkt {
    /// Factorize an explicit KKT matrix (n is the x-block size).
    pub fn from_matrix(matrix: DMatrix<f64>, n: usize, cond_tol: f64) -> Result<Self> {
        let cond = crate::linalg::cond_2(&matrix);
        if !(cond < cond_tol) {
            return Err(SolveError::SingularJacobian { cond });
        }
        Ok(Self {
            lu: matrix.lu(),
            n,
        })
    }

    /// Factorize F'(z0) for the given problem.
    pub fn freeze(obj: &ObjectiveMap, c: &ConstraintMap, z0: &KktPoint) -> Result<Self> {
        Self::from_matrix(kkt_matrix(obj, c, z0), c.n(), c.tolerances().cond_tol)
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        self.lu.solve(rhs).ok_or(SolveError::SingularJacobian {
            cond: f64::INFINITY,
        })
    }

    /// One modified Newton step on a stacked iterate given F evaluated there.
    pub fn step_stacked(&self, z: &DVector<f64>, f_at_z: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(z - self.solve(f_at_z)?)
    }

    pub fn x_dim(&self) -> usize {
        self.n
    }
}

/// z - F'(z0)^{-1} F(z). The x part of the result need not be feasible.
pub fn modified_newton_step(
    frozen: &FrozenKkt,
    obj: &ObjectiveMap,
    c: &ConstraintMap,
    z: &KktPoint,
) -> Result<KktPoint> {
    let f = kkt_residual(obj, c, z);
    let next = frozen.step_stacked(&z.stacked(), &f)?;
    Ok(KktPoint::from_stacked(&next, c.n()))
}

/// Result of a modified Newton run.
#[derive(Debug)]
pub struct NewtonOutcome {
    pub z: KktPoint,
    pub trace: IterationTrace,
    pub steps: usize,
    /// Geometric decay factor of ||F(z_k)|| measured over the run (ignoring
    /// values at the rounding floor); `None` when fewer than one clean pair.
    pub rate_factor: Option<f64>,
    /// Whether the measured factor stayed within 1/2 + RATE_SLACK.
    pub rate_ok: Option<bool>,
}

/// Stationarity residual for a possibly infeasible Newton iterate: reproject
/// onto S first, infinity when no unique projection exists.
pub fn reprojected_residual(obj: &ObjectiveMap, c: &ConstraintMap, x: &DVector<f64>) -> f64 {
    match manifold::project(c, x) {
        Ok(y) => stationarity_residual(obj, c, &y).unwrap_or(f64::INFINITY),
        Err(_) => f64::INFINITY,
    }
}

/// Iterate the modified Newton method from z0 until the (reprojected)
/// stationarity residual drops below eps.
///
/// The caller is responsible for certifying the basin first; an uncertified
/// start may diverge, which is caught after two consecutive growths of
/// ||F(z_k)||.
pub fn run_newton(
    obj: &ObjectiveMap,
    c: &ConstraintMap,
    z0: &KktPoint,
    eps: f64,
    max_steps: usize,
) -> Result<NewtonOutcome> {
    if !(eps > 0.0) {
        return Err(SolveError::InvalidConfig(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let mut trace = IterationTrace::new();
    let mut z = z0.clone();
    let mut f_z = kkt_residual(obj, c, &z);
    let mut f_norm = f_z.norm();
    let mut f_norms = vec![f_norm];
    let res0 = reprojected_residual(obj, c, &z.x);
    trace.push(TraceRow {
        k: 0,
        phase: Phase::Newton,
        f: obj.f(&z.x),
        residual: res0,
        step_len: 0.0,
        descent_ok: None,
        residual_ineq_ok: None,
        x: z.x.clone(),
        kkt_norm: Some(f_norm),
    });
    if res0 <= eps {
        return Ok(NewtonOutcome {
            z,
            trace,
            steps: 0,
            rate_factor: None,
            rate_ok: None,
        });
    }

    let frozen = FrozenKkt::freeze(obj, c, &z)?;
    let mut growth_streak = 0usize;
    for k in 1..=max_steps {
        let next_stacked = frozen.step_stacked(&z.stacked(), &f_z)?;
        let z_next = KktPoint::from_stacked(&next_stacked, c.n());
        let step_len = (next_stacked - z.stacked()).norm();
        f_z = kkt_residual(obj, c, &z_next);
        let f_norm_next = f_z.norm();
        let residual = reprojected_residual(obj, c, &z_next.x);
        trace.push(TraceRow {
            k,
            phase: Phase::Newton,
            f: obj.f(&z_next.x),
            residual,
            step_len,
            descent_ok: None,
            residual_ineq_ok: None,
            x: z_next.x.clone(),
            kkt_norm: Some(f_norm_next),
        });
        f_norms.push(f_norm_next);
        if f_norm_next > f_norm {
            growth_streak += 1;
        } else {
            growth_streak = 0;
        }
        z = z_next;
        f_norm = f_norm_next;
        if growth_streak >= 2 {
            return Err(SolveError::DivergenceDetected {
                step: k,
                f_norm,
                trace: Box::new(trace),
            });
        }
        if residual <= eps {
            let rate_factor = geometric_rate(&f_norms);
            let rate_ok = rate_factor.map(|r| r <= 0.5 + RATE_SLACK);
            return Ok(NewtonOutcome {
                z,
                trace,
                steps: k,
                rate_factor,
                rate_ok,
            });
        }
    }
    Err(SolveError::MaxStepsExceeded {
        max_steps,
        trace: Box::new(trace),
    })
}

/// Geometric mean of the per-step decay of ||F(z_k)||, computed over the
/// prefix that stays above the rounding floor.
fn geometric_rate(f_norms: &[f64]) -> Option<f64> {
    if f_norms.len() < 2 || f_norms[0] <= 0.0 {
        return None;
    }
    let floor = 1e-13 * (1.0 + f_norms[0]);
    if f_norms[0] <= floor {
        return None;
    }
    let mut end = f_norms.len() - 1;
    for (i, &v) in f_norms.iter().enumerate().skip(1) {
        if v <= floor {
            end = i;
            break;
        }
    }
    if end == 0 {
        return None;
    }
    let last = f_norms[end].max(floor);
    Some((last / f_norms[0]).powf(1.0 / end as f64))
}
