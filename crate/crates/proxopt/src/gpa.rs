//! Phase 1: fixed-step gradient projection with per-step descent
//! verification, the gradient mapping, and both switching rules.

use crate::error::{Result, SolveError};
use crate::kkt::{stationarity_residual, ObjectiveMap};
use crate::manifold::{self, ConstraintMap};
use crate::tolerances::{DESCENT_SLACK, RESIDUAL_INEQ_SLACK};
use crate::trace::{IterationTrace, Phase, TraceRow};
use nalgebra::DVector;
use serde::Serialize;

pub use crate::ledger::n1_bound;

/// Which condition hands the iteration off to the Newton phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchRule {
    /// ||P_{T_{x_k}} f'(x_k)|| < C.
    Residual,
    /// ||x_k - x_{k-1}|| <= gamma C / (1 + gamma L1), k >= 1. Cheaper: needs
    /// no tangent projection, and implies the residual condition.
    StepLength,
}

#[derive(Debug, Clone, Copy)]
pub struct GpaConfig {
    /// Fixed step size; must satisfy 0 < gamma < min{1/L1, R/L0}.
    pub gamma: f64,
    /// Switching constant C.
    pub switch_c: f64,
    pub switch_rule: SwitchRule,
    pub max_steps: usize,
    /// Abort with `DescentViolation` when a step breaks the descent
    /// inequality (which falsifies the supplied Lipschitz constants).
    pub descent_check: bool,
}

/// Admissible and optimal fixed step sizes:
/// `gamma_max = min{1/L1, R/L0}` and `gamma_opt = min{1/(3 L1), R/L0}`
/// (the latter minimizes the step-bound factor (1+gL1)^2/(g(1-gL1))).
pub fn step_size_bounds(l0: f64, l1: f64, r: f64) -> (f64, f64) {
    let gamma_max = (1.0 / l1).min(r / l0);
    let gamma_opt = (1.0 / (3.0 * l1)).min(r / l0);
    (gamma_max, gamma_opt)
}

/// One gradient projection step `P_S(x - gamma f'(x))`.
pub fn gpa_step(
    obj: &ObjectiveMap,
    c: &ConstraintMap,
    x: &DVector<f64>,
    gamma: f64,
    descent_check: bool,
) -> Result<DVector<f64>> {
    let target = x - obj.grad(x) * gamma;
    let x_next = manifold::project(c, &target)?;
    if descent_check {
        let f_prev = obj.f(x);
        let f_next = obj.f(&x_next);
        let dx2 = (&x_next - x).norm_squared();
        let allowed = f_prev - 0.5 * (1.0 / gamma - obj.l1().value) * dx2
            + DESCENT_SLACK * (1.0 + f_prev.abs());
        if f_next > allowed {
            return Err(SolveError::DescentViolation {
                step: 0,
                f_prev,
                f_next,
                allowed,
            });
        }
    }
    Ok(x_next)
}

/// The gradient mapping `g_gamma(x) = (x - P_S(x - gamma f'(x))) / gamma`;
/// zero exactly at fixed points of the GPA step.
pub fn gradient_mapping(
    obj: &ObjectiveMap,
    c: &ConstraintMap,
    x: &DVector<f64>,
    gamma: f64,
) -> Result<DVector<f64>> {
    let x_next = gpa_step(obj, c, x, gamma, false)?;
    Ok((x - x_next) / gamma)
}

/// Run the GPA from a feasible start until the selected switching rule fires.
///
/// Every visited iterate is logged: objective value, stationarity residual,
/// step length, and the two per-step inequality checks (descent and
/// ||P_T f'|| <= (1/gamma + L1)||dx||).
pub fn run_gpa(
    obj: &ObjectiveMap,
    c: &ConstraintMap,
    x0: &DVector<f64>,
    cfg: &GpaConfig,
) -> Result<(DVector<f64>, IterationTrace)> {
    let l1 = obj.l1().value;
    let (gamma_max, _) = step_size_bounds(obj.l0().value, l1, c.prox_radius());
    if !(cfg.gamma > 0.0 && cfg.gamma < gamma_max) {
        return Err(SolveError::InvalidConfig(format!(
            "step size {} outside (0, {gamma_max})",
            cfg.gamma
        )));
    }
    if !(cfg.switch_c > 0.0) {
        return Err(SolveError::InvalidConfig(format!(
            "switching constant must be positive, got {}",
            cfg.switch_c
        )));
    }
    if !c.is_feasible(x0) {
        return Err(SolveError::InvalidConfig(format!(
            "start point infeasible: ||g(x0)|| = {:.3e}",
            c.feasibility(x0)
        )));
    }

    let step_threshold = cfg.gamma * cfg.switch_c / (1.0 + cfg.gamma * l1);
    let mut trace = IterationTrace::new();
    let mut x = x0.clone();
    let mut f_x = obj.f(&x);
    let mut residual = stationarity_residual(obj, c, &x)?;
    let mut prev_step_len: Option<f64> = None;
    trace.push(TraceRow {
        k: 0,
        phase: Phase::Gpa,
        f: f_x,
        residual,
        step_len: 0.0,
        descent_ok: None,
        residual_ineq_ok: None,
        x: x.clone(),
        kkt_norm: None,
    });

    for k in 0..=cfg.max_steps {
        let fired = match cfg.switch_rule {
            SwitchRule::Residual => residual < cfg.switch_c,
            SwitchRule::StepLength => prev_step_len.is_some_and(|s| s <= step_threshold),
        };
        if fired {
            return Ok((x, trace));
        }
        if k == cfg.max_steps {
            break;
        }

        let x_next = gpa_step(obj, c, &x, cfg.gamma, false)?;
        let f_next = obj.f(&x_next);
        let dx = (&x_next - &x).norm();
        let res_next = stationarity_residual(obj, c, &x_next)?;

        let allowed =
            f_x - 0.5 * (1.0 / cfg.gamma - l1) * dx * dx + DESCENT_SLACK * (1.0 + f_x.abs());
        let descent_ok = f_next <= allowed;
        if cfg.descent_check && !descent_ok {
            return Err(SolveError::DescentViolation {
                step: k + 1,
                f_prev: f_x,
                f_next,
                allowed,
            });
        }
        let residual_ineq_ok =
            res_next <= (1.0 / cfg.gamma + l1) * dx * (1.0 + RESIDUAL_INEQ_SLACK);

        trace.push(TraceRow {
            k: k + 1,
            phase: Phase::Gpa,
            f: f_next,
            residual: res_next,
            step_len: dx,
            descent_ok: Some(descent_ok),
            residual_ineq_ok: Some(residual_ineq_ok),
            x: x_next.clone(),
            kkt_norm: None,
        });

        x = x_next;
        f_x = f_next;
        residual = res_next;
        prev_step_len = Some(dx);
    }

    Err(SolveError::MaxStepsExceeded {
        max_steps: cfg.max_steps,
        trace: Box::new(trace),
    })
}
