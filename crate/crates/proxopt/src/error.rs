//! Error type shared across the solver library.

use crate::trace::IterationTrace;
use thiserror::Error;

/// Errors raised by manifold operations, the two solver phases, and the
/// diagnostics suite.
#[derive(Debug, Error)]
pub enum SolveError {
    /// The constraint Jacobian g'(x) lost full row rank (or its Gram matrix
    /// became numerically singular).
    #[error("constraint Jacobian is rank deficient (condition estimate {cond:.3e})")]
    RankDeficient { cond: f64 },

    /// The metric projection is not single-valued at the query point.
    #[error("metric projection is ambiguous: {detail}")]
    AmbiguousProjection { detail: String },

    /// Iterative level-set projection failed to converge.
    #[error("level-set projection did not converge in {iters} iterations (|g| = {feas:.3e})")]
    NoConvergence { iters: usize, feas: f64 },

    /// A GPA step increased f beyond the Theorem-style descent guarantee.
    /// This signals that the supplied Lipschitz constants are wrong.
    #[error(
        "descent violation at step {step}: f went {f_prev:.12e} -> {f_next:.12e}, \
         allowed at most {allowed:.12e}"
    )]
    DescentViolation {
        step: usize,
        f_prev: f64,
        f_next: f64,
        allowed: f64,
    },

    /// Iteration budget exhausted before the stopping rule fired.
    #[error("step budget of {max_steps} exhausted before convergence")]
    MaxStepsExceeded {
        max_steps: usize,
        trace: Box<IterationTrace>,
    },

    /// The KKT matrix F'(z0) cannot be factorized reliably.
    #[error("KKT matrix is numerically singular (condition estimate {cond:.3e})")]
    SingularJacobian { cond: f64 },

    /// ||F(z_k)|| grew on two consecutive modified-Newton steps.
    #[error("Newton iteration diverging at step {step} (||F|| = {f_norm:.3e})")]
    DivergenceDetected {
        step: usize,
        f_norm: f64,
        trace: Box<IterationTrace>,
    },

    /// The combined driver ran out of switching-constant fallbacks.
    #[error("Newton basin never certified after {attempts} fallback halvings of C")]
    FallbackExhausted {
        attempts: usize,
        trace: Box<IterationTrace>,
    },

    /// A ledger-based computation needs constants that are not set.
    #[error("constants ledger is missing fields: {}", missing.join(", "))]
    IncompleteLedger { missing: Vec<&'static str> },

    /// No sampler and no user value available to estimate a ledger field.
    #[error("cannot estimate ledger field `{field}`: {reason}")]
    CannotEstimate {
        field: &'static str,
        reason: String,
    },

    /// A closed-form quantity required distinct eigenvalues.
    #[error("spectrum is degenerate: minimal eigenvalue gap {gap:.3e} <= {tol:.3e}")]
    DegenerateSpectrum { gap: f64, tol: f64 },

    /// A supplied derivative disagrees with its finite-difference probe.
    #[error(
        "derivative check failed for `{evaluator}` at probe {probe}: \
         relative error {rel_err:.3e} > {tol:.3e}"
    )]
    DerivativeMismatch {
        evaluator: String,
        probe: usize,
        rel_err: f64,
        tol: f64,
    },

    /// A diagnostic needed a feasible-point sampler and none was provided.
    #[error("no feasible-point sampler available for this constraint")]
    NoSampler,

    /// Vector/matrix sizes do not match the problem dimensions.
    #[error("dimension mismatch: expected {expected}, got {got} for {what}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Invalid configuration or parameter value.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl SolveError {
    /// Extract the iteration trace attached to budget/divergence errors.
    pub fn trace(&self) -> Option<&IterationTrace> {
        match self {
            SolveError::MaxStepsExceeded { trace, .. } => Some(trace),
            SolveError::DivergenceDetected { trace, .. } => Some(trace),
            SolveError::FallbackExhausted { trace, .. } => Some(trace),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, SolveError>;
