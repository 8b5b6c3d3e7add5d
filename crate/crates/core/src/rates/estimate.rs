//! Sampling estimators for the flatness exponent `gamma` and the growth
//! exponent `r` around a reference minimizer.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bench::least_squares_line;
use crate::error::{ApdError, Result};
use crate::problem::{ConstrainedProblem, ReferenceSolution};

/// A convex function with a computable subgradient selection.
pub trait Subdifferentiable {
    fn dim(&self) -> usize;
    /// `None` outside the domain.
    fn value(&self, x: &DVector<f64>) -> Option<f64>;
    fn subgradient(&self, x: &DVector<f64>) -> Option<DVector<f64>>;
}

/// `x -> L(x, lambda*)`, whose minimizer is `x*` at a saddle point. Without
/// constraints this is just `F`.
pub struct LagrangianAtDual<'a> {
    pub problem: &'a ConstrainedProblem,
    pub lambda: &'a DVector<f64>,
}

impl Subdifferentiable for LagrangianAtDual<'_> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn value(&self, x: &DVector<f64>) -> Option<f64> {
        let f = self.problem.evaluate_objective(x).ok()?.finite()?;
        let (_, res) = self.problem.residuals(x).ok()?;
        Some(f + self.lambda.dot(&res))
    }

    fn subgradient(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let z = self.problem.subgradient(x).ok()??;
        Some(z + self.problem.apply_transpose(self.lambda).ok()?)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SampleConfig {
    pub samples: usize,
    /// Samples are drawn with distance to the center log-uniform in
    /// `[radius * 1e-3, radius]` along uniformly random directions.
    pub radius: f64,
    pub seed: u64,
}

fn sample_points(center: &DVector<f64>, cfg: &SampleConfig) -> Result<Vec<DVector<f64>>> {
    if !(cfg.radius > 0.0 && cfg.radius.is_finite()) {
        return Err(ApdError::InvalidParameter(format!(
            "sampling radius must be positive, got {}",
            cfg.radius
        )));
    }
    let n = center.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.samples);
    while out.len() < cfg.samples {
        let d = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = d.norm();
        if norm == 0.0 {
            continue;
        }
        let dist = cfg.radius * 10f64.powf(-3.0 * rng.random::<f64>());
        out.push(center + d * (dist / norm));
    }
    Ok(out)
}

/// Largest `gamma` with `f(x) - f* <= <z, x - x*> / gamma` over all samples.
pub fn flatness_gamma(
    f: &dyn Subdifferentiable,
    center: &DVector<f64>,
    f_star: f64,
    cfg: &SampleConfig,
) -> Result<f64> {
    let mut best = f64::INFINITY;
    let mut used = 0;
    for x in sample_points(center, cfg)? {
        let (Some(v), Some(z)) = (f.value(&x), f.subgradient(&x)) else {
            continue;
        };
        let gap = v - f_star;
        let inner = z.dot(&(&x - center));
        // gap <= 0 imposes no upper bound on gamma
        if gap <= 0.0 {
            continue;
        }
        used += 1;
        best = best.min(inner / gap);
    }
    if used == 0 {
        return Err(ApdError::Estimation(
            "every sample was skipped (no point with F(x) > F*)".into(),
        ));
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthEstimate {
    pub r_hat: f64,
    pub k_hat: f64,
    pub r_squared: f64,
}

/// Fit `log(f(x) - f*) = r log|x - x*| + log K` over the samples.
pub fn growth_exponent(
    f: &dyn Subdifferentiable,
    center: &DVector<f64>,
    f_star: f64,
    cfg: &SampleConfig,
) -> Result<GrowthEstimate> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for x in sample_points(center, cfg)? {
        let Some(v) = f.value(&x) else { continue };
        let gap = v - f_star;
        let dist = (&x - center).norm();
        if gap > 0.0 && dist > 0.0 {
            xs.push(dist.ln());
            ys.push(gap.ln());
        }
    }
    if xs.len() < 8 {
        return Err(ApdError::Estimation(format!(
            "need at least 8 samples with F(x) > F*, got {}",
            xs.len()
        )));
    }
    let (slope, intercept, r_squared) = least_squares_line(&xs, &ys)?;
    Ok(GrowthEstimate {
        r_hat: slope,
        k_hat: intercept.exp(),
        r_squared,
    })
}

/// Flatness exponent of `x -> L(x, lambda*)` around the reference point.
pub fn estimate_flatness_gamma(
    problem: &ConstrainedProblem,
    reference: &ReferenceSolution,
    samples: usize,
    radius: f64,
    seed: u64,
) -> Result<f64> {
    let f = LagrangianAtDual {
        problem,
        lambda: &reference.point.lambda,
    };
    let f_star = f
        .value(&reference.point.x)
        .ok_or_else(|| ApdError::Estimation("reference point outside dom F".into()))?;
    flatness_gamma(
        &f,
        &reference.point.x,
        f_star,
        &SampleConfig {
            samples,
            radius,
            seed,
        },
    )
}

/// Growth exponent and constant of `x -> L(x, lambda*)` around the reference point.
pub fn estimate_growth_exponent(
    problem: &ConstrainedProblem,
    reference: &ReferenceSolution,
    samples: usize,
    radius: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let f = LagrangianAtDual {
        problem,
        lambda: &reference.point.lambda,
    };
    let f_star = f
        .value(&reference.point.x)
        .ok_or_else(|| ApdError::Estimation("reference point outside dom F".into()))?;
    let g = growth_exponent(
        &f,
        &reference.point.x,
        f_star,
        &SampleConfig {
            samples,
            radius,
            seed,
        },
    )?;
    Ok((g.r_hat, g.k_hat))
}
