//! Constants ledger: every algorithmic constant with its provenance.
//!
//! The combined driver, the step bounds, and the diagnostics all consume
//! constants from one place, so correctness verdicts can be downgraded when
//! any input was merely sampled rather than known in closed form.

use crate::error::{Result, SolveError};
use crate::linalg::ceil_steps;
use crate::tolerances::BETA_MIN;
use serde::Serialize;

/// Where a constant came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Supplied by the caller.
    User,
    /// Estimated by pairwise sampling (inflated, but not guaranteed valid).
    Sampled,
    /// Computed from an exact formula for the problem at hand.
    ClosedForm,
}

/// A constant together with its provenance flag.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Constant {
    pub value: f64,
    pub provenance: Provenance,
}

impl Constant {
    pub fn user(value: f64) -> Self {
        Self {
            value,
            provenance: Provenance::User,
        }
    }
    pub fn sampled(value: f64) -> Self {
        Self {
            value,
            provenance: Provenance::Sampled,
        }
    }
    pub fn closed_form(value: f64) -> Self {
        Self {
            value,
            provenance: Provenance::ClosedForm,
        }
    }
}

/// Which term of the switching constant binds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchBinding {
    /// mu * beta / (L1Fx * sigma0)
    ErrorBoundTerm,
    /// (1 - beta)^2 / (4 * L1F * sigma0^2)
    BasinTerm,
}

/// The switching constant and the term that produced it.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SwitchConstant {
    pub value: f64,
    pub binding: SwitchBinding,
}

/// All algorithmic constants of the combined method.
///
/// Unset fields are `None`; operations that need them fail with
/// [`SolveError::IncompleteLedger`] listing what is missing.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ConstantsLedger {
    /// Lipschitz constant of f.
    pub l0: Option<Constant>,
    /// Lipschitz constant of f'.
    pub l1: Option<Constant>,
    /// Proximal smoothness constant R of S.
    pub prox_radius: Option<Constant>,
    /// Tangent error bound constant.
    pub mu: Option<Constant>,
    /// Gradient error bound constant.
    pub nu: Option<Constant>,
    /// Step-size ceiling min{1/L1, R/L0}.
    pub gamma0: Option<Constant>,
    /// Uniform bound on ||F'(x*, lambda_{x*})^{-1}|| over the stationary set.
    pub sigma0: Option<Constant>,
    /// Free parameter in (0, 1).
    pub beta: Option<Constant>,
    /// Lipschitz constant of z -> F'(z).
    pub l1f: Option<Constant>,
    /// Lipschitz constant of x -> F'(x, lambda_x) on S.
    pub l1fx: Option<Constant>,
    /// Lipschitz constant of x -> lambda_x on S.
    pub l_lambda: Option<Constant>,
    /// Neighborhood radius around the stationary set.
    pub d: Option<Constant>,
    /// KKT-space radius r = d * sqrt(1 + L_lambda^2).
    pub r_kkt: Option<Constant>,
    /// Switching constant C.
    pub switch_c: Option<Constant>,
    /// f(x0) - min_S f.
    pub delta_f: Option<Constant>,
}

/// Hypothesis checks for the combined-convergence constants.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LedgerChecks {
    /// beta in [BETA_MIN, 1 - BETA_MIN].
    pub beta_in_range: Option<bool>,
    /// beta <= L1Fx * sigma0 * d.
    pub beta_le_cap: Option<bool>,
    /// (1 - beta) / (2 sigma0 L1F) <= r.
    pub radius_ok: Option<bool>,
}

impl LedgerChecks {
    pub fn all_hold(&self) -> bool {
        self.beta_in_range.unwrap_or(false)
            && self.beta_le_cap.unwrap_or(false)
            && self.radius_ok.unwrap_or(false)
    }
}

macro_rules! need {
    ($ledger:expr, $missing:expr, $($field:ident),+) => {
        $(
            if $ledger.$field.is_none() {
                $missing.push(stringify!($field));
            }
        )+
    };
}

impl ConstantsLedger {
    pub fn value(&self, c: &Option<Constant>) -> Option<f64> {
        c.map(|k| k.value)
    }

    /// True when no set field has `Sampled` provenance.
    pub fn is_exact(&self) -> bool {
        !self
            .fields()
            .iter()
            .any(|(_, c)| matches!(c, Some(k) if k.provenance == Provenance::Sampled))
    }

    /// (name, value) pairs of every field, set or not.
    pub fn fields(&self) -> Vec<(&'static str, Option<Constant>)> {
        vec![
            ("l0", self.l0),
            ("l1", self.l1),
            ("prox_radius", self.prox_radius),
            ("mu", self.mu),
            ("nu", self.nu),
            ("gamma0", self.gamma0),
            ("sigma0", self.sigma0),
            ("beta", self.beta),
            ("l1f", self.l1f),
            ("l1fx", self.l1fx),
            ("l_lambda", self.l_lambda),
            ("d", self.d),
            ("r_kkt", self.r_kkt),
            ("switch_c", self.switch_c),
            ("delta_f", self.delta_f),
        ]
    }

    /// Fill derivable fields from the ones already present:
    /// gamma0, nu, r_kkt and the switching constant. Existing values are kept.
    pub fn derive_closed_forms(&mut self) {
        if self.gamma0.is_none() {
            if let (Some(l0), Some(l1), Some(r)) = (self.l0, self.l1, self.prox_radius) {
                let g0 = (1.0 / l1.value).min(r.value / l0.value);
                self.gamma0 = Some(Constant::closed_form(g0));
            }
        }
        if self.nu.is_none() {
            if let (Some(mu), Some(l1), Some(g0)) = (self.mu, self.l1, self.gamma0) {
                let nu = mu.value / (1.0 + l1.value * g0.value + mu.value * g0.value);
                self.nu = Some(Constant {
                    value: nu,
                    provenance: mu.provenance,
                });
            }
        }
        if self.r_kkt.is_none() {
            if let (Some(d), Some(ll)) = (self.d, self.l_lambda) {
                let r = d.value * (1.0 + ll.value * ll.value).sqrt();
                let prov = if d.provenance == Provenance::Sampled
                    || ll.provenance == Provenance::Sampled
                {
                    Provenance::Sampled
                } else {
                    Provenance::ClosedForm
                };
                self.r_kkt = Some(Constant {
                    value: r,
                    provenance: prov,
                });
            }
        }
        if self.switch_c.is_none() {
            if let Ok(sc) = compute_switch_constant(self) {
                let inputs = [self.mu, self.beta, self.l1fx, self.sigma0, self.l1f];
                let prov = if inputs
                    .iter()
                    .any(|c| matches!(c, Some(k) if k.provenance == Provenance::Sampled))
                {
                    Provenance::Sampled
                } else {
                    Provenance::ClosedForm
                };
                self.switch_c = Some(Constant {
                    value: sc.value,
                    provenance: prov,
                });
            }
        }
    }

    /// Check the convergence-theorem hypotheses that relate the constants.
    pub fn validate(&self) -> LedgerChecks {
        let beta_in_range = self
            .beta
            .map(|b| b.value >= BETA_MIN && b.value <= 1.0 - BETA_MIN);
        let beta_le_cap = match (self.beta, self.l1fx, self.sigma0, self.d) {
            (Some(b), Some(l1fx), Some(s0), Some(d)) => {
                Some(b.value <= l1fx.value * s0.value * d.value)
            }
            _ => None,
        };
        let radius_ok = match (self.beta, self.sigma0, self.l1f, self.r_kkt) {
            (Some(b), Some(s0), Some(l1f), Some(r)) => {
                Some((1.0 - b.value) / (2.0 * s0.value * l1f.value) <= r.value)
            }
            _ => None,
        };
        LedgerChecks {
            beta_in_range,
            beta_le_cap,
            radius_ok,
        }
    }
}

/// The switching constant
/// `C = min{ mu * beta / (L1Fx * sigma0), (1 - beta)^2 / (4 L1F sigma0^2) }`,
/// together with the binding term.
pub fn compute_switch_constant(ledger: &ConstantsLedger) -> Result<SwitchConstant> {
    let mut missing = Vec::new();
    need!(ledger, missing, mu, beta, l1fx, sigma0, l1f);
    if !missing.is_empty() {
        return Err(SolveError::IncompleteLedger { missing });
    }
    let mu = ledger.mu.unwrap().value;
    let beta = ledger.beta.unwrap().value;
    let l1fx = ledger.l1fx.unwrap().value;
    let sigma0 = ledger.sigma0.unwrap().value;
    let l1f = ledger.l1f.unwrap().value;

    for (name, v) in [
        ("mu", mu),
        ("beta", beta),
        ("l1fx", l1fx),
        ("sigma0", sigma0),
        ("l1f", l1f),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(SolveError::InvalidConfig(format!(
                "ledger field `{name}` must be positive and finite, got {v}"
            )));
        }
    }
    if beta < BETA_MIN || beta > 1.0 - BETA_MIN {
        return Err(SolveError::InvalidConfig(format!(
            "beta = {beta} outside the open interval ({BETA_MIN}, {})",
            1.0 - BETA_MIN
        )));
    }

    let eb_term = mu * beta / (l1fx * sigma0);
    let basin_term = (1.0 - beta) * (1.0 - beta) / (4.0 * l1f * sigma0 * sigma0);
    if eb_term <= basin_term {
        Ok(SwitchConstant {
            value: eb_term,
            binding: SwitchBinding::ErrorBoundTerm,
        })
    } else {
        Ok(SwitchConstant {
            value: basin_term,
            binding: SwitchBinding::BasinTerm,
        })
    }
}

/// GPA step bound: `ceil( 2 df (1 + g L1)^2 / (C^2 g (1 - g L1)) )`.
pub fn n1_bound(delta_f: f64, gamma: f64, l1: f64, c: f64) -> u64 {
    let num = 2.0 * delta_f * (1.0 + gamma * l1).powi(2);
    let den = c * c * gamma * (1.0 - gamma * l1);
    ceil_steps(num / den)
}

/// Modified-Newton step bound: `ceil(log2(C sigma0 / (eps (1 - beta)))) + 1`,
/// clamped to 1 when the argument of the logarithm is at most 1.
pub fn n2_bound(c: f64, sigma0: f64, beta: f64, eps: f64) -> u64 {
    let arg = c * sigma0 / (eps * (1.0 - beta));
    if !(arg > 1.0) {
        return 1;
    }
    let v = arg.log2().ceil() + 1.0;
    if v < 1.0 {
        1
    } else {
        v as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn full_ledger() -> ConstantsLedger {
        ConstantsLedger {
            mu: Some(Constant::user(1.0)),
            beta: Some(Constant::user(0.5)),
            l1fx: Some(Constant::user(2.0)),
            sigma0: Some(Constant::user(1.0)),
            l1f: Some(Constant::user(2.0)),
            ..Default::default()
        }
    }

    #[test]
    fn switch_constant_matches_hand_value() {
        // min{ 1*0.5/(2*1), 0.25/(4*2*1) } = min{0.25, 0.03125}
        let sc = compute_switch_constant(&full_ledger()).unwrap();
        assert_relative_eq!(sc.value, 0.03125, max_relative = 1e-15);
        assert_eq!(sc.binding, SwitchBinding::BasinTerm);
    }

    #[test]
    fn switch_constant_rejects_tiny_beta() {
        let mut l = full_ledger();
        l.beta = Some(Constant::user(1e-6));
        match compute_switch_constant(&l) {
            Err(SolveError::InvalidConfig(_)) => {}
            other => panic!("expected InvalidConfig, got {other:?}"),
        }
    }

    #[test]
    fn switch_constant_shrinks_with_sigma0() {
        let base = compute_switch_constant(&full_ledger()).unwrap().value;
        let mut l = full_ledger();
        l.sigma0 = Some(Constant::user(2.0));
        let doubled = compute_switch_constant(&l).unwrap().value;
        // the basin term scales as 1/sigma0^2, the EB term as 1/sigma0
        assert!(doubled < base);
        assert_relative_eq!(doubled, base / 4.0, max_relative = 1e-12);
    }

    #[test]
    fn incomplete_ledger_lists_missing_fields() {
        let mut l = full_ledger();
        l.mu = None;
        l.sigma0 = None;
        match compute_switch_constant(&l) {
            Err(SolveError::IncompleteLedger { missing }) => {
                assert_eq!(missing, vec!["mu", "sigma0"]);
            }
            other => panic!("expected IncompleteLedger, got {other:?}"),
        }
    }

    #[test]
    fn n1_bound_hand_value() {
        // 2*1*(1.4)^2 / (0.1^2 * 0.1 * 0.6) = 6533.33.. -> 6534
        assert_eq!(n1_bound(1.0, 0.1, 4.0, 0.1), 6534);
    }

    #[test]
    fn n1_bound_clamps_and_is_monotone() {
        assert_eq!(n1_bound(1.0, 0.1, 4.0, 1e9), 1);
        let mut prev = u64::MAX;
        for c in [0.01, 0.02, 0.05, 0.1, 1.0] {
            let b = n1_bound(2.0, 0.05, 4.0, c);
            assert!(b <= prev, "bound must be non-increasing in C");
            prev = b;
        }
        assert!(n1_bound(3.0, 0.05, 4.0, 0.1) >= n1_bound(2.0, 0.05, 4.0, 0.1));
    }

    #[test]
    fn n2_bound_hand_value() {
        // log2(1e-3*10 / (1e-8*0.5)) = log2(2e6) -> 21, +1 = 22
        assert_eq!(n2_bound(1e-3, 10.0, 0.5, 1e-8), 22);
    }

    #[test]
    fn n2_bound_clamps_and_halving_eps_adds_one() {
        assert_eq!(n2_bound(1e-3, 1.0, 0.5, 1.0), 1);
        let b1 = n2_bound(1e-3, 10.0, 0.5, 1e-8);
        let b2 = n2_bound(1e-3, 10.0, 0.5, 0.5e-8);
        assert_eq!(b2, b1 + 1);
    }

    #[test]
    fn derive_closed_forms_fills_gamma0_and_c() {
        let mut l = full_ledger();
        l.l0 = Some(Constant::user(2.0));
        l.l1 = Some(Constant::user(4.0));
        l.prox_radius = Some(Constant::user(1.0));
        l.derive_closed_forms();
        assert_relative_eq!(l.gamma0.unwrap().value, 0.25, max_relative = 1e-15);
        assert_relative_eq!(l.switch_c.unwrap().value, 0.03125, max_relative = 1e-15);
        assert_eq!(l.switch_c.unwrap().provenance, Provenance::ClosedForm);
        // mu known: nu = mu / (1 + L1 g0 + mu g0) = 1 / (1 + 1 + 0.25)
        assert_relative_eq!(l.nu.unwrap().value, 1.0 / 2.25, max_relative = 1e-15);
    }

    #[test]
    fn exactness_tracks_sampled_fields() {
        let mut l = full_ledger();
        assert!(l.is_exact());
        l.l1f = Some(Constant::sampled(2.0));
        assert!(!l.is_exact());
    }
}
