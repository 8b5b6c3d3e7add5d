//! Continuous-time accelerated primal-dual flow
//!
//! `2x'' + (alpha/t) x' + grad F_mu(x) + A' lambda = 0`,
//! `(rho/t) lambda' = A(x + x') - b`,
//!
//! integrated as a first-order system in `(x, u = x', lambda)` with the
//! velocity damping treated implicitly. Nonsmooth blocks enter through their
//! Moreau envelopes.

use nalgebra::DVector;

use crate::bench::{HistoryRow, RunHistory};
use crate::error::{ApdError, Result};
use crate::problem::{BlockFunction, ConstrainedProblem, ReferenceSolution};
use crate::rates::{derive_coeffs, RateParams};

pub const DEFAULT_MU: f64 = 1e-3;
pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_T0: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub x: DVector<f64>,
    pub xdot: DVector<f64>,
    pub lambda: DVector<f64>,
}

impl FlowState {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.x.iter().all(|v| v.is_finite())
            && self.xdot.iter().all(|v| v.is_finite())
            && self.lambda.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingConfig {
    /// Moreau envelope parameter.
    pub mu: f64,
    pub integrator_step: f64,
    pub t0: f64,
    pub t_end: f64,
    /// Record every n-th step; the final state is always recorded.
    pub record_every: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            mu: DEFAULT_MU,
            integrator_step: DEFAULT_STEP,
            t0: DEFAULT_T0,
            t_end: 10.0,
            record_every: 1,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(ApdError::InvalidParameter(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if !(self.integrator_step > 0.0 && self.integrator_step.is_finite()) {
            return Err(ApdError::InvalidParameter(format!(
                "integrator step must be positive, got {}",
                self.integrator_step
            )));
        }
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return Err(ApdError::InvalidParameter(format!(
                "t0 must be positive, got {}",
                self.t0
            )));
        }
        if !(self.t_end >= self.t0 && self.t_end.is_finite()) {
            return Err(ApdError::InvalidParameter(format!(
                "t_end = {} is before t0 = {}",
                self.t_end, self.t0
            )));
        }
        if self.record_every == 0 {
            return Err(ApdError::InvalidParameter(
                "record_every must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Number of integrator steps from `t0` to `t_end`.
    pub fn num_steps(&self) -> usize {
        ((self.t_end - self.t0) / self.integrator_step).round() as usize
    }
}

/// Gradient of the Moreau envelope, `(x - prox_{mu f}(x)) / mu`.
pub fn smoothed_gradient(block: &BlockFunction, x: &[f64], mu: f64) -> Result<DVector<f64>> {
    let p = block.prox(x, mu)?;
    Ok((DVector::from_column_slice(x) - p) / mu)
}

/// One step of size `cfg.integrator_step`:
///
/// `u' = (u - dt/2 (grad F_mu(x) + A' lambda)) / (1 + dt alpha / (2t))`,
/// `x' = x + dt u'`,
/// `lambda' = lambda + dt (t/rho) (A(x' + u') - b)`.
pub fn flow_step(
    state: &FlowState,
    problem: &ConstrainedProblem,
    params: &RateParams,
    cfg: &SmoothingConfig,
) -> Result<FlowState> {
    let dt = cfg.integrator_step;
    let t = state.t;
    let force =
        problem.envelope_gradient(&state.x, cfg.mu)? + problem.apply_transpose(&state.lambda)?;
    let damping = 1.0 + dt * params.alpha / (2.0 * t);
    let xdot = (&state.xdot - force * (0.5 * dt)) / damping;
    let x = &state.x + &xdot * dt;
    let (_, res) = problem.residuals(&(&x + &xdot))?;
    let lambda = &state.lambda + res * (dt * t / params.rho);
    let next = FlowState {
        t: t + dt,
        x,
        xdot,
        lambda,
    };
    if !next.is_finite() {
        return Err(ApdError::Integration { t, history: None });
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovBreakdown {
    pub e: f64,
    pub h: f64,
    /// `t^2/2 (L(x, lambda*) - L(x*, lambda))`
    pub duality_term: f64,
    /// `1/2 |s (x - x*) + t x'|^2`
    pub momentum_term: f64,
    /// `xi/2 |x - x*|^2`
    pub primal_dist_term: f64,
    /// `theta |lambda - lambda*|^2`
    pub dual_dist_term: f64,
    /// Set when the reference multiplier is not exact.
    pub approximate: bool,
}

/// Lyapunov energy `E(t)` and `H(t) = t^p E(t)`, with the Lagrangian built
/// from the Moreau envelopes with parameter `mu`.
pub fn lyapunov(
    state: &FlowState,
    problem: &ConstrainedProblem,
    params: &RateParams,
    reference: &ReferenceSolution,
    mu: f64,
) -> Result<LyapunovBreakdown> {
    let c = derive_coeffs(params);
    let x_star = &reference.point.x;
    let l_star = &reference.point.lambda;
    let t = state.t;

    let (_, res_x) = problem.residuals(&state.x)?;
    let (_, res_star) = problem.residuals(x_star)?;
    let l_x = problem.envelope_objective(&state.x, mu)? + l_star.dot(&res_x);
    let l_dual = problem.envelope_objective(x_star, mu)? + state.lambda.dot(&res_star);

    let dx = &state.x - x_star;
    let duality_term = 0.5 * t * t * (l_x - l_dual);
    let momentum_term = 0.5 * (&dx * c.s + &state.xdot * t).norm_squared();
    let primal_dist_term = 0.5 * c.xi * dx.norm_squared();
    let dual_dist_term = params.theta * (&state.lambda - l_star).norm_squared();
    let e = duality_term + momentum_term + primal_dist_term + dual_dist_term;
    Ok(LyapunovBreakdown {
        e,
        h: t.powf(c.p) * e,
        duality_term,
        momentum_term,
        primal_dist_term,
        dual_dist_term,
        approximate: !reference.dual_exact,
    })
}

fn flow_row(
    state: &FlowState,
    problem: &ConstrainedProblem,
    params: &RateParams,
    reference: &ReferenceSolution,
    mu: f64,
    f_star: f64,
) -> Result<HistoryRow> {
    let ly = lyapunov(state, problem, params, reference, mu)?;
    Ok(HistoryRow {
        step: state.t,
        objective_gap: Some(problem.envelope_objective(&state.x, mu)? - f_star),
        primal_residual: problem.residuals(&state.x)?.0,
        lyapunov_e: Some(ly.e),
        lyapunov_h: Some(ly.h),
        sigma: None,
    })
}

/// Integrate from `(t0, x0, v0, lambda0)` to `t_end`. The objective gap is
/// `F_mu(x) - F_mu(x*)`, so `reference` should be a saddle point of the
/// smoothed problem.
pub fn run_flow(
    problem: &ConstrainedProblem,
    params: &RateParams,
    cfg: &SmoothingConfig,
    reference: &ReferenceSolution,
    x0: &DVector<f64>,
    v0: &DVector<f64>,
    lambda0: &DVector<f64>,
) -> Result<RunHistory> {
    cfg.validate()?;
    params.validate()?;
    let n = problem.dim();
    for (what, v, len) in [
        ("x0", x0, n),
        ("v0", v0, n),
        ("lambda0", lambda0, problem.num_rows()),
        ("reference x", &reference.point.x, n),
        (
            "reference lambda",
            &reference.point.lambda,
            problem.num_rows(),
        ),
    ] {
        if v.len() != len {
            return Err(ApdError::dim(what, len, v.len()));
        }
    }

    let id = problem.metadata.get("id").cloned().unwrap_or_default();
    let mut history = RunHistory::new("flow", &id, 0)
        .with_param("alpha", params.alpha)
        .with_param("rho", params.rho)
        .with_param("gamma", params.gamma)
        .with_param("theta", params.theta)
        .with_param("mu", cfg.mu)
        .with_param("dt", cfg.integrator_step)
        .with_param("t0", cfg.t0)
        .with_param("t_end", cfg.t_end);
    if !reference.dual_exact {
        history
            .meta
            .notes
            .push("reference multiplier is approximate; dual terms of E are approximate".into());
    }

    let f_star = problem.envelope_objective(&reference.point.x, cfg.mu)?;
    let mut state = FlowState {
        t: cfg.t0,
        x: x0.clone(),
        xdot: v0.clone(),
        lambda: lambda0.clone(),
    };
    history.push(flow_row(
        &state, problem, params, reference, cfg.mu, f_star,
    )?);

    let steps = cfg.num_steps();
    for i in 1..=steps {
        state = match flow_step(&state, problem, params, cfg) {
            Ok(s) => s,
            Err(ApdError::Integration { t, .. }) => {
                history
                    .meta
                    .notes
                    .push(format!("non-finite state after t = {t}"));
                return Err(ApdError::Integration {
                    t,
                    history: Some(Box::new(history)),
                });
            }
            Err(e) => return Err(e),
        };
        // recompute t from the step count so long runs do not accumulate drift
        state.t = cfg.t0 + i as f64 * cfg.integrator_step;
        if i % cfg.record_every == 0 || i == steps {
            history.push(flow_row(
                &state, problem, params, reference, cfg.mu, f_star,
            )?);
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::PrimalDualPoint;
    use nalgebra::DMatrix;

    fn identity_zero_problem() -> ConstrainedProblem {
        ConstrainedProblem::new(
            vec![(BlockFunction::zero(1).unwrap(), DMatrix::identity(1, 1))],
            DVector::zeros(1),
        )
        .unwrap()
    }

    #[test]
    fn smoothed_gradient_examples() {
        let l1 = BlockFunction::weighted_l1(1.0, 1).unwrap();
        assert!((smoothed_gradient(&l1, &[2.0], 0.5).unwrap()[0] - 1.0).abs() < 1e-15);
        assert_eq!(smoothed_gradient(&l1, &[0.0], 0.5).unwrap()[0], 0.0);
        let q = BlockFunction::half_squared_norm(2).unwrap();
        let g = smoothed_gradient(&q, &[3.0, -1.0], 0.2).unwrap();
        assert!((g[0] - 3.0 / 1.2).abs() < 1e-10 && (g[1] + 1.0 / 1.2).abs() < 1e-10);
    }

    #[test]
    fn hand_computed_step() {
        let p = identity_zero_problem();
        let params = RateParams::new(2.0, 1.0, 2.0, 1.0).unwrap();
        let cfg = SmoothingConfig {
            integrator_step: 0.1,
            ..Default::default()
        };
        let s = FlowState {
            t: 1.0,
            x: DVector::zeros(1),
            xdot: DVector::from_element(1, 1.0),
            lambda: DVector::zeros(1),
        };
        let next = flow_step(&s, &p, &params, &cfg).unwrap();
        let u = 1.0 / 1.1;
        assert!((next.xdot[0] - u).abs() < 1e-15);
        assert!((next.x[0] - 0.1 * u).abs() < 1e-15);
        // lambda' = 0.1 * (1/1) * (x' + u')
        assert!((next.lambda[0] - 0.1 * (0.1 * u + u)).abs() < 1e-15);
        assert!((next.t - 1.1).abs() < 1e-15);
    }

    #[test]
    fn equilibrium_is_stationary() {
        let p = ConstrainedProblem::new(
            vec![(
                BlockFunction::half_squared_norm(2).unwrap(),
                DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
            )],
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let cfg = SmoothingConfig::default();
        let r = p
            .smoothed(cfg.mu)
            .unwrap()
            .quadratic_saddle_point()
            .unwrap();
        let params = RateParams::new(3.0, 2.0, 2.0, 1.0).unwrap();
        let s = FlowState {
            t: 1.0,
            x: r.point.x.clone(),
            xdot: DVector::zeros(2),
            lambda: r.point.lambda.clone(),
        };
        let next = flow_step(&s, &p, &params, &cfg).unwrap();
        assert!((&next.x - &s.x).norm() < 1e-14);
        assert!(next.xdot.norm() < 1e-14);
        assert!((&next.lambda - &s.lambda).norm() < 1e-14);
        let ly = lyapunov(&s, &p, &params, &r, cfg.mu).unwrap();
        assert!(ly.e.abs() < 1e-14 && ly.h.abs() < 1e-14);
    }

    #[test]
    fn lyapunov_matches_term_by_term() {
        let p = ConstrainedProblem::new(
            vec![(
                BlockFunction::half_squared_norm(2).unwrap(),
                DMatrix::from_row_slice(1, 2, &[0.6, 0.8]),
            )],
            DVector::from_element(1, 0.5),
        )
        .unwrap();
        let mu = 1e-3;
        let r = p.smoothed(mu).unwrap().quadratic_saddle_point().unwrap();
        let params = RateParams::new(1.0, 2.0, 2.0, 1.0).unwrap();
        let s = FlowState {
            t: 3.0,
            x: DVector::from_vec(vec![0.3, -1.2]),
            xdot: DVector::from_vec(vec![0.5, 0.25]),
            lambda: DVector::from_vec(vec![0.7]),
        };
        let ly = lyapunov(&s, &p, &params, &r, mu).unwrap();

        // independent transcription: F_mu(x) = |x|^2 / (2 (1 + mu)), s = 1/4, xi = s(s - 1/2 + 1), theta = 1/2
        let f = |x: &[f64]| (x[0] * x[0] + x[1] * x[1]) / (2.0 * (1.0 + mu));
        let ax = |x: &[f64]| 0.6 * x[0] + 0.8 * x[1] - 0.5;
        let (xs, ls) = ([r.point.x[0], r.point.x[1]], r.point.lambda[0]);
        let x = [0.3, -1.2];
        let t = 3.0;
        let sc = 0.25;
        let xi = sc * (sc - 0.5 + 1.0);
        let gap = (f(&x) + ls * ax(&x)) - (f(&xs) + 0.7 * ax(&xs));
        let m0 = sc * (x[0] - xs[0]) + t * 0.5;
        let m1 = sc * (x[1] - xs[1]) + t * 0.25;
        let d2 = (x[0] - xs[0]).powi(2) + (x[1] - xs[1]).powi(2);
        let e = t * t / 2.0 * gap
            + 0.5 * (m0 * m0 + m1 * m1)
            + xi / 2.0 * d2
            + 0.5 * (0.7 - ls).powi(2);
        assert!(
            (ly.e - e).abs() <= 1e-12 * e.abs().max(1.0),
            "{} vs {e}",
            ly.e
        );
        let sum = ly.duality_term + ly.momentum_term + ly.primal_dist_term + ly.dual_dist_term;
        assert_eq!(ly.e, sum);
        // p = -2 + 2/4 = -1.5
        assert!((ly.h - t.powf(-1.5) * ly.e).abs() < 1e-15);
        assert!(!ly.approximate);
    }

    #[test]
    fn xi_zero_drops_primal_distance() {
        let p = identity_zero_problem();
        // gamma = 2, alpha = alpha_tilde = 4
        let params = RateParams::new(4.0, 1.0, 2.0, 1.0).unwrap();
        let r = ReferenceSolution::from_point(&p, PrimalDualPoint::zeros(&p), "analytic", true)
            .unwrap();
        let s = FlowState {
            t: 2.0,
            x: DVector::from_element(1, 5.0),
            xdot: DVector::zeros(1),
            lambda: DVector::zeros(1),
        };
        assert_eq!(
            lyapunov(&s, &p, &params, &r, 1e-3)
                .unwrap()
                .primal_dist_term,
            0.0
        );
    }

    #[test]
    fn zero_length_run_has_one_row() {
        let p = identity_zero_problem();
        let params = RateParams::new(3.0, 1.0, 2.0, 1.0).unwrap();
        let r = ReferenceSolution::from_point(&p, PrimalDualPoint::zeros(&p), "analytic", true)
            .unwrap();
        let cfg = SmoothingConfig {
            t_end: 1.0,
            ..Default::default()
        };
        let z = DVector::zeros(1);
        let h = run_flow(&p, &params, &cfg, &r, &z, &z, &z).unwrap();
        assert_eq!(h.len(), 1);
    }

    #[test]
    fn step_halving_is_first_order() {
        let p = ConstrainedProblem::new(
            vec![(
                BlockFunction::half_squared_norm(1).unwrap(),
                DMatrix::identity(1, 1),
            )],
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let params = RateParams::new(3.0, 2.0, 2.0, 1.0).unwrap();
        let r = p.smoothed(1e-3).unwrap().quadratic_saddle_point().unwrap();
        let x0 = DVector::zeros(1);
        let terminal = |dt: f64| {
            let cfg = SmoothingConfig {
                integrator_step: dt,
                t_end: 2.0,
                record_every: usize::MAX,
                ..Default::default()
            };
            let h = run_flow(&p, &params, &cfg, &r, &x0, &x0, &x0).unwrap();
            h.last().unwrap().objective_gap.unwrap()
        };
        let fine = terminal(1e-5);
        let e1 = (terminal(2e-3) - fine).abs();
        let e2 = (terminal(1e-3) - fine).abs();
        assert!(e2 < e1, "{e1} {e2}");
        // error ratio near 2 for a first-order scheme
        assert!(e1 / e2 > 1.6 && e1 / e2 < 2.4, "{}", e1 / e2);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = SmoothingConfig {
            mu: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SmoothingConfig {
            t_end: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
