use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ApdError, Result};
use crate::problem::{BlockFunction, ConstrainedProblem, ReferenceSolution};

/// Sparse least-absolute-deviation recovery: `min delta |x|_1 + |y|_1`
/// subject to `Ax - y = b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadSpec {
    pub m: usize,
    pub n: usize,
    pub s: usize,
    pub density: f64,
    pub noise_level: f64,
    pub delta: f64,
    pub seed: u64,
}

impl LadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(ApdError::InvalidParameter(
                "m and n must be positive".into(),
            ));
        }
        if self.s > self.n {
            return Err(ApdError::InvalidParameter(format!(
                "sparsity {} exceeds n = {}",
                self.s, self.n
            )));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(ApdError::InvalidParameter(format!(
                "density must lie in (0, 1], got {}",
                self.density
            )));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(ApdError::InvalidParameter(
                "noise_level must be nonnegative".into(),
            ));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(ApdError::InvalidParameter(
                "delta must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn id(&self) -> String {
        format!("lad-m{}-n{}-s{}-seed{}", self.m, self.n, self.s, self.seed)
    }
}

/// Returns the problem and the sparse ground-truth signal.
pub fn generate_lad(spec: &LadSpec) -> Result<(ConstrainedProblem, DVector<f64>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut a = DMatrix::zeros(spec.m, spec.n);
    for i in 0..spec.m {
        for j in 0..spec.n {
            if rng.random::<f64>() < spec.density {
                a[(i, j)] = rng.sample(StandardNormal);
            }
        }
    }
    let mut x_true = DVector::zeros(spec.n);
    let mut support: Vec<usize> = sample(&mut rng, spec.n, spec.s).into_vec();
    support.sort_unstable();
    for j in support {
        x_true[j] = rng.sample(StandardNormal);
    }
    let noise = DVector::from_fn(spec.m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let b = &a * &x_true + noise * spec.noise_level;

    let problem = ConstrainedProblem::new(
        vec![
            (BlockFunction::weighted_l1(spec.delta, spec.n)?, a),
            (
                BlockFunction::weighted_l1(1.0, spec.m)?,
                -DMatrix::identity(spec.m, spec.m),
            ),
        ],
        b,
    )?
    .with_metadata("generator", "lad")
    .with_metadata("id", spec.id())
    .with_metadata("m", spec.m.to_string())
    .with_metadata("n", spec.n.to_string())
    .with_metadata("s", spec.s.to_string())
    .with_metadata("density", spec.density.to_string())
    .with_metadata("noise_level", spec.noise_level.to_string())
    .with_metadata("delta", spec.delta.to_string())
    .with_metadata("seed", spec.seed.to_string())
    .with_metadata("matrix_entries", "bernoulli(density) * standard-normal")
    .with_metadata(
        "signal_entries",
        "standard-normal on a uniform random support",
    )
    .with_metadata("noise_entries", "noise_level * standard-normal");
    Ok((problem, x_true))
}

/// `min 1/2 |x|^2` subject to one equality `<a, x> = b`, with its analytic
/// saddle point `x* = a b / |a|^2`, `lambda* = -b / |a|^2`.
pub fn quadratic_toy(a: &[f64], b: f64) -> Result<(ConstrainedProblem, ReferenceSolution)> {
    let n = a.len();
    let problem = ConstrainedProblem::new(
        vec![(
            BlockFunction::half_squared_norm(n)?,
            DMatrix::from_row_slice(1, n, a),
        )],
        DVector::from_element(1, b),
    )?
    .with_metadata("generator", "quadratic-toy")
    .with_metadata("n", n.to_string());
    let reference = problem.quadratic_saddle_point()?;
    Ok((problem, reference))
}

/// Random constraint row and right-hand side, both standard normal.
pub fn generate_quadratic_toy(
    n: usize,
    seed: u64,
) -> Result<(ConstrainedProblem, ReferenceSolution)> {
    if n == 0 {
        return Err(ApdError::InvalidParameter("n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let a: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let b: f64 = rng.sample(StandardNormal);
        if a.iter().all(|&v| v == 0.0) {
            continue;
        }
        let (p, r) = quadratic_toy(&a, b)?;
        let p = p
            .with_metadata("id", format!("quadratic-n{n}-seed{seed}"))
            .with_metadata("seed", seed.to_string());
        return Ok((p, r));
    }
}
