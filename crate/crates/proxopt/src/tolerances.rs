//! Default numeric tolerances used across the library.
//!
//! Every threshold is configurable at the call site that uses it (projection
//! tolerances live on [`crate::manifold::ConstraintMap`], slacks on the solver
//! configs); these constants are the documented defaults.

/// Smallest norm / singular value at which a metric projection is still
/// treated as single-valued.
pub const PROJ_TOL: f64 = 1e-8;

/// Feasibility threshold: a point with `||g(x)|| <= FEAS_TOL` counts as on S.
pub const FEAS_TOL: f64 = 1e-10;

/// Orthogonality threshold for the level-set projection residual
/// (the correction x - y must be normal to S at y).
pub const ORTHO_TOL: f64 = 1e-8;

/// Iteration cap for the damped Gauss-Newton level-set projection.
pub const MAX_PROJ_ITERS: usize = 50;

/// Condition-number ceiling before a Jacobian or KKT matrix is declared
/// numerically singular.
pub const COND_TOL: f64 = 1e12;

/// Margin for classifying a point as on the boundary of the tube U_S(R).
pub const TUBE_MARGIN: f64 = 1e-8;

/// Minimal spectral gap below which a spectrum counts as degenerate.
pub const EIG_TOL: f64 = 1e-8;

/// Samples with distance to the stationary set below this floor are excluded
/// from error-bound ratio statistics (avoids 0/0 noise).
pub const RHO_FLOOR: f64 = 1e-8;

/// Extra margin subtracted from the strict h < 1/4 basin inequality.
pub const BASIN_MARGIN: f64 = 0.0;

/// Slack added to the worst-case 1/2 geometric decay factor when checking the
/// modified-Newton rate post hoc.
pub const RATE_SLACK: f64 = 0.1;

/// Slack allowed below the closed-form gradient-error-bound floor.
pub const GEB_SLACK: f64 = 1e-6;

/// The open interval for beta is enforced as [BETA_MIN, 1 - BETA_MIN].
pub const BETA_MIN: f64 = 1e-3;

/// Default number of switching-constant halvings before the combined driver
/// gives up on certifying a Newton basin.
pub const FALLBACK_MAX: usize = 20;

/// Relative tolerance for central-difference derivative checks.
pub const FD_REL_TOL: f64 = 1e-5;

/// Descent inequality slack, scaled by (1 + |f(x_k)|).
pub const DESCENT_SLACK: f64 = 1e-12;

/// Multiplicative slack on the per-step residual inequality
/// ||P_T f'|| <= (1/gamma + L1) ||dx||.
pub const RESIDUAL_INEQ_SLACK: f64 = 1e-9;

/// Max-norm tolerance for symmetry of supplied Hessians.
pub const SYM_TOL: f64 = 1e-12;
