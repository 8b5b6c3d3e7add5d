//! Discrete accelerated primal-dual method for two-block problems
//! `min f(x) + g(y)` s.t. `Ax + By = b`.
//!
//! Each iteration `k >= 1` with `c_k = (2k(1+h)+alpha)/(k h^2)`,
//! `tau_k = 1/(2 c_k)`, `beta_k = 2kh/(2k(1+h)+alpha)` and `eta_k = h^2 k / rho`:
//!
//! ```text
//! lambda_hat = lambda - (Ax + By - b)/rho + eta_k B(w - y)
//! x+         = argmin f(u) + <lambda_hat, Au + By - b> + sigma/2 |Au + By - b|^2
//!                     + c_k |u - (x + beta_k (v - x))|^2
//! v+         = x+ + (x+ - x)/h
//! lambda_bar = lambda + eta_k (A v+ + B w - b)
//! y+         = prox_{tau_k g}(y + beta_k (w - y) - tau_k B' lambda_bar)
//! w+         = y+ + (y+ - y)/h
//! lambda+    = lambda + eta_k (A v+ + B w+ - b)
//! ```
//!
//! followed by residual balancing on `sigma`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bench::{HistoryRow, RunHistory};
use crate::error::{ApdError, Result};
use crate::problem::{ConstrainedProblem, ReferenceSolution, TwoBlockView};
use crate::spectral::spectral_norm;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyPolicy {
    pub tau_incr: f64,
    pub mu: f64,
    pub enabled: bool,
}

impl Default for PenaltyPolicy {
    fn default() -> Self {
        PenaltyPolicy {
            tau_incr: 2.0,
            mu: 10.0,
            enabled: true,
        }
    }
}

impl PenaltyPolicy {
    pub fn disabled() -> Self {
        PenaltyPolicy {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_incr > 1.0 && self.mu > 1.0) {
            return Err(ApdError::InvalidParameter(format!(
                "penalty policy needs tau_incr > 1 and mu > 1, got ({}, {})",
                self.tau_incr, self.mu
            )));
        }
        Ok(())
    }
}

/// Residual balancing: grow `sigma` when the primal residual dominates,
/// shrink it when the dual residual dominates.
pub fn adapt_penalty(sigma: f64, primal_res: f64, dual_res: f64, policy: &PenaltyPolicy) -> f64 {
    if !policy.enabled {
        sigma
    } else if primal_res > policy.mu * dual_res {
        sigma * policy.tau_incr
    } else if dual_res > policy.mu * primal_res {
        sigma / policy.tau_incr
    } else {
        sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApdParams {
    pub alpha: f64,
    pub rho: f64,
    pub h: f64,
    pub sigma0: f64,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_gap: f64,
    pub inner_tol: f64,
    pub inner_max: usize,
    pub penalty_policy: PenaltyPolicy,
    /// Seed for the standard-normal starting point.
    pub seed: u64,
    /// A primal residual above this counts as divergence.
    pub divergence_threshold: f64,
}

impl ApdParams {
    /// Defaults with `sigma0 = 1/rho`.
    pub fn new(alpha: f64, rho: f64, h: f64) -> Result<Self> {
        let p = ApdParams {
            alpha,
            rho,
            h,
            sigma0: 1.0 / rho,
            max_iter: 5000,
            tol_primal: 1e-6,
            tol_gap: 1e-6,
            inner_tol: 1e-8,
            inner_max: 500,
            penalty_policy: PenaltyPolicy::default(),
            seed: 0,
            divergence_threshold: 1e12,
        };
        p.validate()?;
        Ok(p)
    }

    /// Defaults with `h = 1 / kappa([A B])`.
    pub fn for_problem(problem: &ConstrainedProblem, alpha: f64, rho: f64) -> Result<Self> {
        let kappa = spectral_norm(&problem.stacked_matrix())?;
        if kappa == 0.0 {
            return Err(ApdError::InvalidProblem("constraint matrix is zero".into()));
        }
        Self::new(alpha, rho, 1.0 / kappa)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("rho", self.rho),
            ("h", self.h),
            ("sigma0", self.sigma0),
            ("tol_primal", self.tol_primal),
            ("tol_gap", self.tol_gap),
            ("inner_tol", self.inner_tol),
            ("divergence_threshold", self.divergence_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ApdError::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.inner_max == 0 {
            return Err(ApdError::InvalidParameter(
                "inner_max must be at least 1".into(),
            ));
        }
        self.penalty_policy.validate()
    }

    /// `c_k`, the weight of the proximal term in the x-subproblem.
    pub fn c_k(&self, k: usize) -> f64 {
        let k = k as f64;
        (2.0 * k * (1.0 + self.h) + self.alpha) / (k * self.h * self.h)
    }

    /// `tau_k`, the prox step of the y-update.
    pub fn tau_k(&self, k: usize) -> f64 {
        let k = k as f64;
        k * self.h * self.h / (2.0 * (2.0 * k * (1.0 + self.h) + self.alpha))
    }

    /// Extrapolation weight `beta_k` in `x~ = x + beta_k (v - x)`.
    pub fn beta_k(&self, k: usize) -> f64 {
        let k = k as f64;
        2.0 * k * self.h / (2.0 * k * (1.0 + self.h) + self.alpha)
    }

    /// Dual step `h^2 k / rho`.
    pub fn eta_k(&self, k: usize) -> f64 {
        self.h * self.h * k as f64 / self.rho
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApdState {
    pub k: usize,
    pub x: DVector<f64>,
    pub v: DVector<f64>,
    pub y: DVector<f64>,
    pub w: DVector<f64>,
    pub lambda: DVector<f64>,
    pub lambda_bar: DVector<f64>,
    pub lambda_hat: DVector<f64>,
    pub sigma_k: f64,
    /// Gradient-mapping norm reached by the last x-subproblem.
    pub inner_residual: f64,
    /// Relative violation of `lambda+ - lambda_bar = eta_k B (w+ - w)` in the last step.
    pub dual_identity_error: f64,
}

impl ApdState {
    /// Start at `(x, y, lambda)` with zero velocity (`v = x`, `w = y`).
    pub fn at(x: DVector<f64>, y: DVector<f64>, lambda: DVector<f64>, sigma: f64) -> Self {
        ApdState {
            k: 1,
            v: x.clone(),
            w: y.clone(),
            lambda_bar: lambda.clone(),
            lambda_hat: lambda.clone(),
            x,
            y,
            lambda,
            sigma_k: sigma,
            inner_residual: 0.0,
            dual_identity_error: 0.0,
        }
    }

    /// Standard-normal `x`, `y` and `lambda` from `seed`.
    pub fn random(problem: &ConstrainedProblem, sigma: f64, seed: u64) -> Result<Self> {
        let view = problem.two_blocks()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = draw(view.f.dim());
        let y = draw(view.g.dim());
        let lambda = draw(view.rhs.len());
        Ok(Self::at(x, y, lambda, sigma))
    }

    /// `(x, y)` concatenated.
    pub fn primal(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.x.len() + self.y.len());
        out.rows_mut(0, self.x.len()).copy_from(&self.x);
        out.rows_mut(self.x.len(), self.y.len()).copy_from(&self.y);
        out
    }
}

/// Outcome of the inner proximal-gradient loop for the x-subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolve {
    pub x: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solver bound to one problem with `|A|^2` precomputed.
#[derive(Debug, Clone)]
pub struct Apd<'a> {
    view: TwoBlockView<'a>,
    params: ApdParams,
    a_norm_sq: f64,
}

impl<'a> Apd<'a> {
    pub fn new(problem: &'a ConstrainedProblem, params: ApdParams) -> Result<Self> {
        params.validate()?;
        let view = problem.two_blocks()?;
        let a_norm = spectral_norm(view.a)?;
        Ok(Apd {
            view,
            params,
            a_norm_sq: a_norm * a_norm,
        })
    }

    pub fn params(&self) -> &ApdParams {
        &self.params
    }

    fn check_state(&self, s: &ApdState) -> Result<()> {
        let (n1, n2, r) = (self.view.f.dim(), self.view.g.dim(), self.view.rhs.len());
        for (what, len, want) in [
            ("x", s.x.len(), n1),
            ("v", s.v.len(), n1),
            ("y", s.y.len(), n2),
            ("w", s.w.len(), n2),
            ("lambda", s.lambda.len(), r),
        ] {
            if len != want {
                return Err(ApdError::dim(what, want, len));
            }
        }
        if s.k == 0 {
            return Err(ApdError::InvalidParameter(
                "iteration index k starts at 1".into(),
            ));
        }
        Ok(())
    }

    fn residual(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        self.view.a * x + self.view.b * y - self.view.rhs
    }

    pub fn lambda_hat(&self, s: &ApdState) -> DVector<f64> {
        let p = &self.params;
        &s.lambda - self.residual(&s.x, &s.y) / p.rho + self.view.b * (&s.w - &s.y) * p.eta_k(s.k)
    }

    /// Proximal gradient on the x-subproblem, warm-started from `x~`.
    pub fn x_update(&self, s: &ApdState, lambda_hat: &DVector<f64>) -> Result<InnerSolve> {
        let p = &self.params;
        let k = s.k;
        let c = p.c_k(k);
        let x_tilde = &s.x + (&s.v - &s.x) * p.beta_k(k);
        let step = 1.0 / (s.sigma_k * self.a_norm_sq + 2.0 * c);
        // constant part of the residual: By - b
        let offset = self.view.b * &s.y - self.view.rhs;

        let mut x = x_tilde.clone();
        let mut residual = f64::INFINITY;
        for it in 1..=p.inner_max {
            let r = self.view.a * &x + &offset;
            let grad =
                self.view.a.tr_mul(&(lambda_hat + r * s.sigma_k)) + (&x - &x_tilde) * (2.0 * c);
            let trial = &x - grad * step;
            let next = self.view.f.prox(trial.as_slice(), step)?;
            residual = (&next - &x).norm() / step;
            x = next;
            if residual <= p.inner_tol {
                return Ok(InnerSolve {
                    x,
                    residual,
                    iterations: it,
                    converged: true,
                });
            }
        }
        Ok(InnerSolve {
            x,
            residual,
            iterations: p.inner_max,
            converged: false,
        })
    }

    /// Seven updates of one iteration followed by penalty adaptation.
    /// Returns the new state and whether the inner solve converged.
    pub fn step(&self, s: &ApdState) -> Result<(ApdState, bool)> {
        self.check_state(s)?;
        let p = &self.params;
        let k = s.k;
        let eta = p.eta_k(k);
        let (a, b) = (self.view.a, self.view.b);

        let lambda_hat = self.lambda_hat(s);
        let inner = self.x_update(s, &lambda_hat)?;
        let x = inner.x;
        let v = &x + (&x - &s.x) / p.h;
        let av = a * &v;
        let lambda_bar = &s.lambda + (&av + b * &s.w - self.view.rhs) * eta;

        let tau = p.tau_k(k);
        let y_tilde = &s.y + (&s.w - &s.y) * p.beta_k(k);
        let y_arg = &y_tilde - b.tr_mul(&lambda_bar) * tau;
        let y = self.view.g.prox(y_arg.as_slice(), tau)?;
        let w = &y + (&y - &s.y) / p.h;
        let lambda = &s.lambda + (&av + b * &w - self.view.rhs) * eta;

        let expected = b * (&w - &s.w) * eta;
        let scale = 1f64.max(lambda.norm()).max(lambda_bar.norm());
        let dual_identity_error = (&lambda - &lambda_bar - expected).norm() / scale;

        let primal_res = self.residual(&x, &y).norm();
        let dual_res = s.sigma_k * a.tr_mul(&(b * (&y - &s.y))).norm();
        let sigma_k = adapt_penalty(s.sigma_k, primal_res, dual_res, &p.penalty_policy);

        let next = ApdState {
            k: k + 1,
            x,
            v,
            y,
            w,
            lambda,
            lambda_bar,
            lambda_hat,
            sigma_k,
            inner_residual: inner.residual,
            dual_identity_error,
        };
        let finite = [&next.x, &next.v, &next.y, &next.w, &next.lambda]
            .iter()
            .all(|vec| vec.iter().all(|e| e.is_finite()));
        if !finite {
            return Err(ApdError::Divergence {
                iteration: k,
                reason: "non-finite iterate".into(),
                history: None,
            });
        }
        if primal_res > p.divergence_threshold {
            return Err(ApdError::Divergence {
                iteration: k,
                reason: format!(
                    "primal residual {primal_res:e} above {:e}",
                    p.divergence_threshold
                ),
                history: None,
            });
        }
        Ok((next, inner.converged))
    }
}

/// Free-function form of [`Apd::lambda_hat`].
pub fn lambda_hat(
    state: &ApdState,
    problem: &ConstrainedProblem,
    params: &ApdParams,
) -> Result<DVector<f64>> {
    Ok(Apd::new(problem, *params)?.lambda_hat(state))
}

/// Free-function form of [`Apd::x_update`], computing `lambda_hat` first.
pub fn x_update(
    state: &ApdState,
    problem: &ConstrainedProblem,
    params: &ApdParams,
) -> Result<InnerSolve> {
    let solver = Apd::new(problem, *params)?;
    solver.x_update(state, &solver.lambda_hat(state))
}

/// Free-function form of [`Apd::step`].
pub fn apd_step(
    state: &ApdState,
    problem: &ConstrainedProblem,
    params: &ApdParams,
) -> Result<ApdState> {
    Ok(Apd::new(problem, *params)?.step(state)?.0)
}

/// Result of [`solve`].
#[derive(Debug, Clone)]
pub struct ApdRun {
    pub state: ApdState,
    pub history: RunHistory,
    pub converged: bool,
    /// Largest relative dual-identity violation over all iterations.
    pub max_dual_identity_error: f64,
    /// Iterations whose x-subproblem hit `inner_max`.
    pub inner_warnings: usize,
}

/// Solve from the seeded standard-normal start.
pub fn solve(
    problem: &ConstrainedProblem,
    params: &ApdParams,
    reference: Option<&ReferenceSolution>,
) -> Result<ApdRun> {
    let start = ApdState::random(problem, params.sigma0, params.seed)?;
    solve_from(problem, params, start, reference)
}

/// Iterate until `|Ax + By - b| <= tol_primal` and, with a reference,
/// `|F - F*| <= tol_gap`, or until `max_iter` steps.
pub fn solve_from(
    problem: &ConstrainedProblem,
    params: &ApdParams,
    start: ApdState,
    reference: Option<&ReferenceSolution>,
) -> Result<ApdRun> {
    let solver = Apd::new(problem, *params)?;
    solver.check_state(&start)?;
    let id = problem.metadata.get("id").cloned().unwrap_or_default();
    let mut history = RunHistory::new("apd", &id, params.seed)
        .with_param("alpha", params.alpha)
        .with_param("rho", params.rho)
        .with_param("h", params.h)
        .with_param("sigma0", params.sigma0);
    let f_star = reference.map(|r| r.objective_value);

    let record = |s: &ApdState, history: &mut RunHistory| -> Result<(f64, Option<f64>)> {
        let z = s.primal();
        let res = problem.residuals(&z)?.0;
        let gap = match f_star {
            Some(fs) => Some(problem.evaluate_objective(&z)?.to_f64() - fs),
            None => None,
        };
        history.push(HistoryRow {
            step: s.k as f64,
            objective_gap: gap,
            primal_residual: res,
            lyapunov_e: None,
            lyapunov_h: None,
            sigma: Some(s.sigma_k),
        });
        Ok((res, gap))
    };
    let done = |res: f64, gap: Option<f64>| {
        res <= params.tol_primal && gap.is_none_or(|g| g.abs() <= params.tol_gap)
    };

    let mut state = start;
    let mut max_err: f64 = 0.0;
    let mut warnings = 0;
    let (res, gap) = record(&state, &mut history)?;
    let mut converged = done(res, gap);
    let mut steps = 0;
    while !converged && steps < params.max_iter {
        let (next, inner_ok) = match solver.step(&state) {
            Ok(v) => v,
            Err(ApdError::Divergence {
                iteration, reason, ..
            }) => {
                history
                    .meta
                    .notes
                    .push(format!("diverged at iteration {iteration}: {reason}"));
                return Err(ApdError::Divergence {
                    iteration,
                    reason,
                    history: Some(Box::new(history)),
                });
            }
            Err(e) => return Err(e),
        };
        if !inner_ok {
            warnings += 1;
        }
        max_err = max_err.max(next.dual_identity_error);
        state = next;
        steps += 1;
        let (res, gap) = record(&state, &mut history)?;
        converged = done(res, gap);
    }
    if warnings > 0 {
        history.meta.notes.push(format!(
            "x-subproblem hit inner_max in {warnings} iterations"
        ));
    }
    history.meta.notes.push(if converged {
        format!("converged at k = {}", state.k)
    } else {
        format!("stopped at max_iter = {}", params.max_iter)
    });
    Ok(ApdRun {
        state,
        history,
        converged,
        max_dual_identity_error: max_err,
        inner_warnings: warnings,
    })
}

/// Dense direct solve of the x-subproblem for a quadratic `f`; used as an
/// oracle for the inner loop.
pub fn quadratic_x_update_exact(
    problem: &ConstrainedProblem,
    params: &ApdParams,
    state: &ApdState,
    lambda_hat: &DVector<f64>,
) -> Result<DVector<f64>> {
    let view = problem.two_blocks()?;
    let (q, qv) = match view.f.kind() {
        crate::problem::BlockKind::Quadratic { q_mat, q_vec } => (q_mat.clone(), q_vec.clone()),
        crate::problem::BlockKind::Zero => {
            let n = view.f.dim();
            (DMatrix::zeros(n, n), DVector::zeros(n))
        }
        other => {
            return Err(ApdError::Unsupported(format!(
                "closed-form x-update needs a smooth f, found {}",
                other.name()
            )))
        }
    };
    let c = params.c_k(state.k);
    let x_tilde = &state.x + (&state.v - &state.x) * params.beta_k(state.k);
    let n = view.f.dim();
    let lhs = q + view.a.tr_mul(view.a) * state.sigma_k + DMatrix::identity(n, n) * (2.0 * c);
    let offset = view.b * &state.y - view.rhs;
    let rhs = -qv - view.a.tr_mul(lambda_hat) - view.a.tr_mul(&offset) * state.sigma_k
        + x_tilde * (2.0 * c);
    lhs.cholesky().map(|ch| ch.solve(&rhs)).ok_or_else(|| {
        ApdError::InvalidProblem("x-subproblem matrix is not positive definite".into())
    })
}
