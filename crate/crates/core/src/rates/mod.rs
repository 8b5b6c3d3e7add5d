//! Coefficient algebra of the Lyapunov rate analysis, regime classification
//! and empirical flatness/growth exponent estimation.
//!
//! With `s = alpha/(gamma+2)` and `p = -2 + gamma*alpha/(gamma+2)` the
//! derivative of `H(t) = t^p E(t)` is bounded by `t^p (K1 c(t) + K2 d(t))`,
//! so the signs of `K1` and `K2` decide whether `H` is monotone.

mod estimate;
mod regime;

pub use estimate::{
    estimate_flatness_gamma, estimate_growth_exponent, flatness_gamma, growth_exponent,
    GrowthEstimate, LagrangianAtDual, SampleConfig, Subdifferentiable,
};
pub use regime::{classify_regime, table_label, CaseLabel, RegimeReport, Sign, SIGN_BAND};

use crate::error::{ApdError, Result};

/// Flow parameters together with the problem constant `kappa`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateParams {
    pub alpha: f64,
    pub rho: f64,
    pub gamma: f64,
    /// Squared largest singular value of the stacked constraint matrix.
    pub kappa_squared: f64,
    pub theta: f64,
    theta_default: bool,
    /// Growth exponent `r` in `[1, 2]`, diagnostic only.
    pub growth_r: Option<f64>,
    /// Growth constant `K`, diagnostic only.
    pub growth_k: Option<f64>,
}

impl RateParams {
    /// Parameters with the coupling `theta = alpha * rho / 4`.
    pub fn new(alpha: f64, rho: f64, gamma: f64, kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0) {
            return Err(ApdError::InvalidParameter(format!(
                "kappa out of range: {kappa}"
            )));
        }
        Self::with_kappa_squared(alpha, rho, gamma, kappa * kappa)
    }

    /// Same as [`RateParams::new`] but takes `kappa^2` directly, so that
    /// values such as `kappa^2 = 2` stay exact.
    pub fn with_kappa_squared(
        alpha: f64,
        rho: f64,
        gamma: f64,
        kappa_squared: f64,
    ) -> Result<Self> {
        let p = RateParams {
            alpha,
            rho,
            gamma,
            kappa_squared,
            theta: alpha * rho / 4.0,
            theta_default: true,
            growth_r: None,
            growth_k: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// Override `theta`; K1 then uses the general closed form.
    pub fn with_theta(mut self, theta: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(ApdError::InvalidParameter(format!(
                "theta must be finite, got {theta}"
            )));
        }
        self.theta = theta;
        self.theta_default = false;
        Ok(self)
    }

    pub fn with_growth(mut self, r: f64, k: f64) -> Result<Self> {
        if !(1.0..=2.0).contains(&r) || !(k > 0.0) {
            return Err(ApdError::InvalidParameter(format!(
                "growth exponent must lie in [1, 2] with positive constant, got r = {r}, K = {k}"
            )));
        }
        self.growth_r = Some(r);
        self.growth_k = Some(k);
        Ok(self)
    }

    pub fn kappa(&self) -> f64 {
        self.kappa_squared.sqrt()
    }

    pub fn theta_is_default(&self) -> bool {
        self.theta_default
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(ApdError::InvalidParameter(format!(
                "{what} out of range: {v}"
            )))
        };
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha", self.alpha);
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad("rho", self.rho);
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return bad("gamma", self.gamma);
        }
        if !(self.kappa_squared >= 0.0 && self.kappa_squared.is_finite()) {
            return bad("kappa^2", self.kappa_squared);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedCoeffs {
    pub s: f64,
    pub xi: f64,
    pub p: f64,
    pub k1: f64,
    pub k2: f64,
    pub alpha_tilde: f64,
    pub d1: f64,
    /// Smaller zero of `K1` as a function of alpha (or the single zero when gamma = 2).
    pub alpha_lo: Option<f64>,
    pub alpha_hi: Option<f64>,
}

/// `gamma*alpha / (gamma+2)`, the exponent in `O(t^-rate)`.
pub fn predicted_rate(alpha: f64, gamma: f64) -> f64 {
    gamma * alpha / (gamma + 2.0)
}

/// Treat gamma as exactly 2 inside this band (the K1 bracket degenerates to linear).
const GAMMA_TWO_BAND: f64 = 1e-12;

pub(crate) fn gamma_is_two(gamma: f64) -> bool {
    (gamma - 2.0).abs() <= GAMMA_TWO_BAND
}

/// Coefficients `(c2, c1, c0)` of the bracket
/// `-g(g-2) a^2 + 4(g-1)(g+2) a + 2(k^2-2)(g+2)^2`, whose sign is that of K1.
pub fn k1_bracket_coefficients(gamma: f64, kappa2: f64) -> (f64, f64, f64) {
    let gp2 = gamma + 2.0;
    (
        -gamma * (gamma - 2.0),
        4.0 * (gamma - 1.0) * gp2,
        2.0 * (kappa2 - 2.0) * gp2 * gp2,
    )
}

/// The bracket itself evaluated at `alpha`.
pub fn k1_bracket(gamma: f64, kappa2: f64, alpha: f64) -> f64 {
    let (c2, c1, c0) = k1_bracket_coefficients(gamma, kappa2);
    (c2 * alpha + c1) * alpha + c0
}

pub fn derive_coeffs(params: &RateParams) -> DerivedCoeffs {
    let RateParams {
        alpha,
        rho,
        gamma,
        kappa_squared: kappa2,
        theta,
        ..
    } = *params;
    let gp2 = gamma + 2.0;
    let s = alpha / gp2;
    let p = -2.0 + gamma * alpha / gp2;
    let xi = s * (s - alpha / 2.0 + 1.0);
    let k2 = p * theta;
    let k1 = if params.theta_default {
        alpha / (4.0 * gp2.powi(3)) * k1_bracket(gamma, kappa2, alpha)
    } else {
        theta * kappa2 / rho
            - alpha
                * (alpha * alpha * (gamma - 2.0) * gamma - 4.0 * alpha * (gamma - 1.0) * gp2
                    + gp2 * gp2 * (gamma * kappa2 + 4.0))
                / (4.0 * gp2.powi(3))
    };
    let alpha_tilde = 2.0 * gp2 / gamma;
    let d1 = 2.0 * gp2 * gp2 * (kappa2 * gamma * (gamma - 2.0) + 2.0);

    let (alpha_lo, alpha_hi) = if gamma_is_two(gamma) {
        let root = -2.0 * (kappa2 - 2.0);
        (if root > 0.0 { Some(root) } else { None }, None)
    } else if d1 >= 0.0 {
        let (c2, c1, c0) = k1_bracket_coefficients(gamma, kappa2);
        let half_b = c1 / 2.0;
        // D1 is the quarter discriminant (c1/2)^2 - c2 c0
        let sign = if half_b < 0.0 { -1.0 } else { 1.0 };
        let q = -(half_b + sign * d1.sqrt());
        let (r1, r2) = if q == 0.0 {
            let v = -half_b / c2;
            (v, v)
        } else {
            (q / c2, c0 / q)
        };
        (Some(r1.min(r2)), Some(r1.max(r2)))
    } else {
        (None, None)
    };

    DerivedCoeffs {
        s,
        xi,
        p,
        k1,
        k2,
        alpha_tilde,
        d1,
        alpha_lo,
        alpha_hi,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coeffs(alpha: f64, gamma: f64, kappa2: f64) -> DerivedCoeffs {
        derive_coeffs(&RateParams::with_kappa_squared(alpha, 2.0, gamma, kappa2).unwrap())
    }

    #[test]
    fn k2_vanishes_at_alpha_tilde_for_gamma_two() {
        let c = coeffs(4.0, 2.0, 1.0);
        assert_eq!(c.p, 0.0);
        assert_eq!(c.k2, 0.0);
        assert_eq!(c.alpha_tilde, 4.0);
    }

    #[test]
    fn k1_boundary_for_gamma_two() {
        let c = coeffs(2.0, 2.0, 1.0);
        assert_eq!(c.k1, 0.0);
        assert_eq!(c.alpha_lo, Some(2.0));
        assert_eq!(c.alpha_hi, None);
        // kappa^2 >= 2 leaves no positive zero
        assert_eq!(coeffs(1.0, 2.0, 3.0).alpha_lo, None);
    }

    #[test]
    fn d1_degenerate_point() {
        let c = coeffs(1.0, 1.0, 2.0);
        assert_eq!(c.d1, 0.0);
        assert_eq!(c.alpha_lo, Some(0.0));
        assert_eq!(c.alpha_hi, Some(0.0));
    }

    #[test]
    fn gamma_three_roots() {
        let c = coeffs(1.0, 3.0, 1.0);
        assert!((c.d1 - 250.0).abs() < 1e-12);
        // reference roots of -3a^2 + 40a - 50 from the quadratic formula
        let lo = (40.0 - 1000f64.sqrt()) / 6.0;
        let hi = (40.0 + 1000f64.sqrt()) / 6.0;
        assert!((c.alpha_lo.unwrap() - lo).abs() < 1e-12);
        assert!((c.alpha_hi.unwrap() - hi).abs() < 1e-12);
        // the four-decimal values usually quoted are 1.3963 and 11.9370
        assert!((lo - 1.3963).abs() < 5e-4 && (hi - 11.9370).abs() < 5e-4);
        // sign changes of the bracket sampled on a fine grid land next to the roots
        let mut changes = Vec::new();
        let mut prev = k1_bracket(3.0, 1.0, 1e-4);
        for i in 2..200_000 {
            let a = i as f64 * 1e-4;
            let cur = k1_bracket(3.0, 1.0, a);
            if prev.signum() != cur.signum() {
                changes.push(a);
            }
            prev = cur;
        }
        assert_eq!(changes.len(), 2);
        assert!((changes[0] - lo).abs() < 2e-4);
        assert!((changes[1] - hi).abs() < 2e-4);
    }

    #[test]
    fn general_theta_form_matches_specialised_one() {
        for &(alpha, gamma, kappa2, rho) in &[
            (0.5, 1.0, 0.3, 2.0),
            (3.0, 2.5, 4.0, 6.0),
            (7.0, 4.0, 1.0, 0.5),
        ] {
            let p = RateParams::with_kappa_squared(alpha, rho, gamma, kappa2).unwrap();
            let general = derive_coeffs(&p.with_theta(alpha * rho / 4.0).unwrap());
            let special = derive_coeffs(&p);
            assert!((general.k1 - special.k1).abs() < 1e-12 * (1.0 + special.k1.abs()));
            assert_eq!(general.k2, special.k2);
        }
    }

    #[test]
    fn xi_closed_form() {
        for &(alpha, gamma) in &[(0.3, 1.0), (2.0, 2.0), (9.0, 3.5)] {
            let c = coeffs(alpha, gamma, 1.0);
            let alt = -alpha * gamma * (alpha - 2.0 * (gamma + 2.0) / gamma)
                / (2.0 * (gamma + 2.0).powi(2));
            assert!((c.xi - alt).abs() < 1e-13);
        }
    }

    #[test]
    fn predicted_rate_examples() {
        assert_eq!(predicted_rate(4.0, 2.0), 2.0);
        assert_eq!(predicted_rate(6.0, 1.0), 2.0);
        assert!(predicted_rate(1e-300, 1.0) > 0.0);
    }

    #[test]
    fn params_validation() {
        assert!(RateParams::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(RateParams::new(1.0, -1.0, 1.0, 1.0).is_err());
        assert!(RateParams::new(1.0, 1.0, 0.5, 1.0).is_err());
        let p = RateParams::new(2.0, 3.0, 1.0, 1.0).unwrap();
        assert_eq!(p.theta, 1.5);
        assert!(p.with_growth(2.5, 1.0).is_err());
    }
}
