//! Linearized proximal ADMM for `min f(x) + g(y)` s.t. `Ax + By = b`:
//!
//! ```text
//! x+      = prox_{f/ax}(x - (c/ax) A'(Ax + By - b + lambda/c))
//! y+      = prox_{g/ay}(y - (c/ay) B'(Ax+ + By - b + lambda/c))
//! lambda+ = lambda + c (Ax+ + By+ - b)
//! ```

use nalgebra::DVector;

use crate::bench::{HistoryRow, RunHistory};
use crate::error::{ApdError, Result};
use crate::problem::{ConstrainedProblem, PrimalDualPoint, ReferenceSolution, TwoBlockView};
use crate::spectral::spectral_norm;

/// Safety factor applied to `c |A|^2` and `c |B|^2` by the defaults.
pub const STEP_MARGIN: f64 = 1.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpmmParams {
    pub c: f64,
    pub alpha_x: f64,
    pub alpha_y: f64,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_gap: f64,
    pub divergence_threshold: f64,
}

impl LpmmParams {
    /// Checks `alpha_x >= c |A|^2` and `alpha_y >= c |B|^2`.
    pub fn new(
        problem: &ConstrainedProblem,
        c: f64,
        alpha_x: f64,
        alpha_y: f64,
        max_iter: usize,
    ) -> Result<Self> {
        let view = problem.two_blocks()?;
        if !(c > 0.0 && c.is_finite()) {
            return Err(ApdError::InvalidParameter(format!(
                "c must be positive, got {c}"
            )));
        }
        let ka = spectral_norm(view.a)?;
        let kb = spectral_norm(view.b)?;
        // small relative slack so the defaults survive rounding
        let slack = 1.0 + 1e-12;
        if !(alpha_x * slack >= c * ka * ka) {
            return Err(ApdError::InvalidParameter(format!(
                "alpha_x = {alpha_x} violates alpha_x >= c |A|^2 = {}",
                c * ka * ka
            )));
        }
        if !(alpha_y * slack >= c * kb * kb) {
            return Err(ApdError::InvalidParameter(format!(
                "alpha_y = {alpha_y} violates alpha_y >= c |B|^2 = {}",
                c * kb * kb
            )));
        }
        Ok(LpmmParams {
            c,
            alpha_x,
            alpha_y,
            max_iter,
            tol_primal: 1e-10,
            tol_gap: 1e-10,
            divergence_threshold: 1e12,
        })
    }

    /// `c = 1`, `alpha_x = 1.01 c |A|^2`, `alpha_y = 1.01 c |B|^2`.
    pub fn defaults_for(problem: &ConstrainedProblem, max_iter: usize) -> Result<Self> {
        let view = problem.two_blocks()?;
        let ka = spectral_norm(view.a)?;
        let kb = spectral_norm(view.b)?;
        let c = 1.0;
        Self::new(
            problem,
            c,
            STEP_MARGIN * c * ka * ka,
            STEP_MARGIN * c * kb * kb,
            max_iter,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpmmState {
    pub k: usize,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub lambda: DVector<f64>,
}

impl LpmmState {
    pub fn zeros(problem: &ConstrainedProblem) -> Result<Self> {
        let v = problem.two_blocks()?;
        Ok(LpmmState {
            k: 0,
            x: DVector::zeros(v.f.dim()),
            y: DVector::zeros(v.g.dim()),
            lambda: DVector::zeros(v.rhs.len()),
        })
    }

    pub fn primal(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.x.len() + self.y.len());
        out.rows_mut(0, self.x.len()).copy_from(&self.x);
        out.rows_mut(self.x.len(), self.y.len()).copy_from(&self.y);
        out
    }
}

fn step_view(view: &TwoBlockView<'_>, s: &LpmmState, p: &LpmmParams) -> Result<LpmmState> {
    let c = p.c;
    let scaled_dual = &s.lambda / c;
    let r = view.a * &s.x + view.b * &s.y - view.rhs + &scaled_dual;
    let x_arg = &s.x - view.a.tr_mul(&r) * (c / p.alpha_x);
    let x = view.f.prox(x_arg.as_slice(), 1.0 / p.alpha_x)?;
    let ax = view.a * &x;
    let r = &ax + view.b * &s.y - view.rhs + &scaled_dual;
    let y_arg = &s.y - view.b.tr_mul(&r) * (c / p.alpha_y);
    let y = view.g.prox(y_arg.as_slice(), 1.0 / p.alpha_y)?;
    let lambda = &s.lambda + (ax + view.b * &y - view.rhs) * c;
    Ok(LpmmState {
        k: s.k + 1,
        x,
        y,
        lambda,
    })
}

pub fn lpmm_step(
    state: &LpmmState,
    problem: &ConstrainedProblem,
    params: &LpmmParams,
) -> Result<LpmmState> {
    step_view(&problem.two_blocks()?, state, params)
}

#[derive(Debug, Clone)]
pub struct LpmmRun {
    pub state: LpmmState,
    pub history: RunHistory,
    pub converged: bool,
}

pub fn solve(
    problem: &ConstrainedProblem,
    params: &LpmmParams,
    reference: Option<&ReferenceSolution>,
) -> Result<LpmmRun> {
    solve_from(problem, params, LpmmState::zeros(problem)?, reference, 1)
}

/// Runs up to `max_iter` steps from `start`, recording every
/// `record_every`-th iterate and the last one.
pub fn solve_from(
    problem: &ConstrainedProblem,
    params: &LpmmParams,
    start: LpmmState,
    reference: Option<&ReferenceSolution>,
    record_every: usize,
) -> Result<LpmmRun> {
    let view = problem.two_blocks()?;
    let record_every = record_every.max(1);
    let id = problem.metadata.get("id").cloned().unwrap_or_default();
    let mut history = RunHistory::new("lpmm", &id, 0)
        .with_param("c", params.c)
        .with_param("alpha_x", params.alpha_x)
        .with_param("alpha_y", params.alpha_y);
    let f_star = reference.map(|r| r.objective_value);

    let measure = |s: &LpmmState| -> Result<(f64, Option<f64>)> {
        let z = s.primal();
        let res = problem.residuals(&z)?.0;
        let gap = match f_star {
            Some(fs) => Some(problem.evaluate_objective(&z)?.to_f64() - fs),
            None => None,
        };
        Ok((res, gap))
    };
    let row = |s: &LpmmState, res: f64, gap: Option<f64>| HistoryRow {
        step: s.k as f64,
        objective_gap: gap,
        primal_residual: res,
        lyapunov_e: None,
        lyapunov_h: None,
        sigma: Some(params.c),
    };
    let done = |res: f64, gap: Option<f64>| {
        res <= params.tol_primal && gap.is_none_or(|g| g.abs() <= params.tol_gap)
    };

    let mut state = start;
    let (res, gap) = measure(&state)?;
    history.push(row(&state, res, gap));
    let mut converged = done(res, gap);
    let mut steps = 0;
    while !converged && steps < params.max_iter {
        let next = step_view(&view, &state, params)?;
        steps += 1;
        let (res, gap) = measure(&next)?;
        let finite = next
            .x
            .iter()
            .chain(next.y.iter())
            .chain(next.lambda.iter())
            .all(|v| v.is_finite());
        if !finite || res > params.divergence_threshold {
            let reason = if finite {
                format!(
                    "primal residual {res:e} above {:e}",
                    params.divergence_threshold
                )
            } else {
                "non-finite iterate".to_string()
            };
            history
                .meta
                .notes
                .push(format!("diverged at iteration {}: {reason}", next.k));
            return Err(ApdError::Divergence {
                iteration: next.k,
                reason,
                history: Some(Box::new(history)),
            });
        }
        state = next;
        converged = done(res, gap);
        if steps % record_every == 0 || converged || steps == params.max_iter {
            history.push(row(&state, res, gap));
        }
    }
    Ok(LpmmRun {
        state,
        history,
        converged,
    })
}

/// Residual the long run must reach for [`compute_reference`] to succeed.
pub const REFERENCE_FLOOR: f64 = 1e-8;

/// Long run of `long_iter` steps from zero, tagged `lpmm-long-run`.
/// Requires `long_iter >= 10 * params.max_iter`.
pub fn compute_reference(
    problem: &ConstrainedProblem,
    params: &LpmmParams,
    long_iter: usize,
) -> Result<ReferenceSolution> {
    if long_iter < 10 * params.max_iter {
        return Err(ApdError::InvalidParameter(format!(
            "long_iter = {long_iter} must be at least 10 * max_iter = {}",
            10 * params.max_iter
        )));
    }
    let view = problem.two_blocks()?;
    let mut state = LpmmState::zeros(problem)?;
    for _ in 0..long_iter {
        state = step_view(&view, &state, params)?;
    }
    let z = state.primal();
    if z.iter().chain(state.lambda.iter()).any(|v| !v.is_finite()) {
        return Err(ApdError::Divergence {
            iteration: long_iter,
            reason: "reference run produced a non-finite iterate".into(),
            history: None,
        });
    }
    let (res, _) = problem.residuals(&z)?;
    if res > REFERENCE_FLOOR {
        return Err(ApdError::ReferenceFloor {
            residual: res,
            floor: REFERENCE_FLOOR,
        });
    }
    ReferenceSolution::from_point(
        problem,
        PrimalDualPoint::new(z, state.lambda),
        "lpmm-long-run",
        false,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::BlockFunction;
    use nalgebra::DMatrix;

    fn scalar(f: BlockFunction, g: BlockFunction, a: f64, b: f64, rhs: f64) -> ConstrainedProblem {
        ConstrainedProblem::new(
            vec![
                (f, DMatrix::from_element(1, 1, a)),
                (g, DMatrix::from_element(1, 1, b)),
            ],
            DVector::from_element(1, rhs),
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_step() {
        let z = BlockFunction::zero(1).unwrap();
        let p = scalar(z.clone(), z, 1.0, 1.0, 0.0);
        let params = LpmmParams::new(&p, 1.0, 1.0, 1.0, 10).unwrap();
        let s = LpmmState {
            k: 0,
            x: DVector::from_element(1, 1.0),
            y: DVector::from_element(1, 1.0),
            lambda: DVector::zeros(1),
        };
        let n = lpmm_step(&s, &p, &params).unwrap();
        // x+ = 1 - (1 + 1) = -1; y+ = 1 - (-1 + 1) = 1; lambda+ = -1 + 1 = 0
        assert!((n.x[0] + 1.0).abs() < 1e-12);
        assert!((n.y[0] - 1.0).abs() < 1e-12);
        assert!(n.lambda[0].abs() < 1e-12);
    }

    #[test]
    fn saddle_is_fixed_point() {
        let q = BlockFunction::half_squared_norm(1).unwrap();
        let p = scalar(q.clone(), q, 1.0, -1.0, 2.0);
        let params = LpmmParams::defaults_for(&p, 10).unwrap();
        let s = LpmmState {
            k: 0,
            x: DVector::from_element(1, 1.0),
            y: DVector::from_element(1, -1.0),
            lambda: DVector::from_element(1, -1.0),
        };
        let n = lpmm_step(&s, &p, &params).unwrap();
        assert!((n.x[0] - 1.0).abs() < 1e-14 && (n.y[0] + 1.0).abs() < 1e-14);
        assert!((n.lambda[0] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_short_steps() {
        let z = BlockFunction::zero(1).unwrap();
        let p = scalar(z.clone(), z, 2.0, 1.0, 0.0);
        assert!(LpmmParams::new(&p, 1.0, 3.9, 1.0, 10).is_err());
        assert!(LpmmParams::new(&p, 1.0, 4.0, 0.5, 10).is_err());
        assert!(LpmmParams::new(&p, 1.0, 4.0, 1.0, 10).is_ok());
    }

    #[test]
    fn dual_update_tracks_residual() {
        let p = scalar(
            BlockFunction::weighted_l1(0.3, 1).unwrap(),
            BlockFunction::weighted_l1(1.0, 1).unwrap(),
            1.5,
            -1.0,
            0.7,
        );
        let params = LpmmParams::defaults_for(&p, 10).unwrap();
        let mut s = LpmmState::zeros(&p).unwrap();
        for _ in 0..50 {
            let n = lpmm_step(&s, &p, &params).unwrap();
            let r = p.residuals(&n.primal()).unwrap().1;
            assert_eq!(&n.lambda - &s.lambda, r * params.c);
            s = n;
        }
    }

    #[test]
    fn zero_objective_reference_is_feasible() {
        let z = BlockFunction::zero(2).unwrap();
        let p = ConstrainedProblem::new(
            vec![
                (
                    z.clone(),
                    DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]),
                ),
                (z, -DMatrix::identity(2, 2)),
            ],
            DVector::from_vec(vec![1.0, -1.0]),
        )
        .unwrap();
        let params = LpmmParams::defaults_for(&p, 100).unwrap();
        let r = compute_reference(&p, &params, 5000).unwrap();
        assert_eq!(r.objective_value, 0.0);
        assert!(r.tolerance <= REFERENCE_FLOOR);
        assert_eq!(r.provenance, "lpmm-long-run");
        assert!(compute_reference(&p, &params, 999).is_err());
    }

    #[test]
    fn single_measurement_lad_matches_closed_form() {
        // min delta |x| + |a x - b|: x = b/a when delta < |a|
        for (a, b, delta) in [(2.0, 0.8, 0.5), (0.5, 1.0, 0.9), (-1.5, 0.6, 0.1)] {
            let p = scalar(
                BlockFunction::weighted_l1(delta, 1).unwrap(),
                BlockFunction::weighted_l1(1.0, 1).unwrap(),
                a,
                -1.0,
                b,
            );
            let params = LpmmParams::defaults_for(&p, 2000).unwrap();
            let r = compute_reference(&p, &params, 20_000).unwrap();
            let (x, f) = if delta < a.abs() {
                (b / a, delta * (b / a).abs())
            } else {
                (0.0, b.abs())
            };
            assert!(
                (r.point.x[0] - x).abs() < 1e-8,
                "{a} {b} {delta}: {}",
                r.point.x[0]
            );
            assert!((r.objective_value - f).abs() < 1e-8);
        }
    }

    #[test]
    fn residual_floor_error() {
        let p = scalar(
            BlockFunction::weighted_l1(0.1, 1).unwrap(),
            BlockFunction::weighted_l1(1.0, 1).unwrap(),
            1.0,
            -1.0,
            3.0,
        );
        let params = LpmmParams::defaults_for(&p, 0).unwrap();
        assert!(matches!(
            compute_reference(&p, &params, 1),
            Err(ApdError::ReferenceFloor { .. })
        ));
    }
}
