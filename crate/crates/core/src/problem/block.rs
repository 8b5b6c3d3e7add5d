use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ApdError, Result};

/// Value of a block function, which may be `+inf` outside the domain of an
/// indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ObjectiveValue {
    Finite(f64),
    Infinite,
}

impl ObjectiveValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, ObjectiveValue::Finite(_))
    }

    /// The finite value, or `None` when infinite.
    pub fn finite(&self) -> Option<f64> {
        match *self {
            ObjectiveValue::Finite(v) => Some(v),
            ObjectiveValue::Infinite => None,
        }
    }

    /// The finite value; `f64::INFINITY` only at the reporting boundary.
    pub fn to_f64(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl std::ops::Add for ObjectiveValue {
    type Output = ObjectiveValue;

    fn add(self, rhs: ObjectiveValue) -> ObjectiveValue {
        match (self, rhs) {
            (ObjectiveValue::Finite(a), ObjectiveValue::Finite(b)) => ObjectiveValue::Finite(a + b),
            _ => ObjectiveValue::Infinite,
        }
    }
}

impl std::ops::Add<f64> for ObjectiveValue {
    type Output = ObjectiveValue;

    fn add(self, rhs: f64) -> ObjectiveValue {
        self + ObjectiveValue::Finite(rhs)
    }
}

/// Supported separable block functions.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockKind {
    /// f(u) = 0.
    Zero,
    /// f(u) = weight * ||u||_1.
    WeightedL1 { weight: f64 },
    /// f(u) = 1/2 u'Qu + q'u with Q symmetric positive semidefinite.
    Quadratic {
        q_mat: DMatrix<f64>,
        q_vec: DVector<f64>,
    },
    /// f(u) = 0 if u >= 0 componentwise, +inf otherwise.
    NonNegIndicator,
}

impl BlockKind {
    pub fn name(&self) -> &'static str {
        match self {
            BlockKind::Zero => "zero",
            BlockKind::WeightedL1 { .. } => "weighted-l1",
            BlockKind::Quadratic { .. } => "quadratic",
            BlockKind::NonNegIndicator => "indicator-nonneg",
        }
    }
}

/// One block `f^i` of a separable objective.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockFunction {
    kind: BlockKind,
    dim: usize,
}

impl BlockFunction {
    pub fn zero(dim: usize) -> Result<Self> {
        Self::new(BlockKind::Zero, dim)
    }

    pub fn weighted_l1(weight: f64, dim: usize) -> Result<Self> {
        Self::new(BlockKind::WeightedL1 { weight }, dim)
    }

    pub fn quadratic(q_mat: DMatrix<f64>, q_vec: DVector<f64>) -> Result<Self> {
        let dim = q_vec.len();
        Self::new(BlockKind::Quadratic { q_mat, q_vec }, dim)
    }

    /// `1/2 ||u||^2` on `dim` coordinates.
    pub fn half_squared_norm(dim: usize) -> Result<Self> {
        Self::quadratic(DMatrix::identity(dim, dim), DVector::zeros(dim))
    }

    pub fn nonneg_indicator(dim: usize) -> Result<Self> {
        Self::new(BlockKind::NonNegIndicator, dim)
    }

    pub fn new(kind: BlockKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(ApdError::InvalidProblem(
                "block dimension must be positive".into(),
            ));
        }
        match &kind {
            BlockKind::WeightedL1 { weight } => {
                if !(weight.is_finite() && *weight >= 0.0) {
                    return Err(ApdError::InvalidParameter(format!(
                        "l1 weight must be finite and nonnegative, got {weight}"
                    )));
                }
            }
            BlockKind::Quadratic { q_mat, q_vec } => {
                if q_mat.nrows() != dim || q_mat.ncols() != dim || q_vec.len() != dim {
                    return Err(ApdError::dim("quadratic block", dim, q_mat.nrows()));
                }
                validate_psd(q_mat)?;
            }
            BlockKind::Zero | BlockKind::NonNegIndicator => {}
        }
        Ok(BlockFunction { kind, dim })
    }

    pub fn kind(&self) -> &BlockKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.dim {
            return Err(ApdError::dim(
                format!("{} block", self.kind.name()),
                self.dim,
                got,
            ));
        }
        Ok(())
    }

    pub fn evaluate(&self, u: &[f64]) -> Result<ObjectiveValue> {
        self.check_len(u.len())?;
        Ok(match &self.kind {
            BlockKind::Zero => ObjectiveValue::Finite(0.0),
            BlockKind::WeightedL1 { weight } => {
                ObjectiveValue::Finite(weight * u.iter().map(|v| v.abs()).sum::<f64>())
            }
            BlockKind::Quadratic { q_mat, q_vec } => {
                let u = DVector::from_column_slice(u);
                ObjectiveValue::Finite(0.5 * u.dot(&(q_mat * &u)) + q_vec.dot(&u))
            }
            BlockKind::NonNegIndicator => {
                if u.iter().all(|&v| v >= 0.0) {
                    ObjectiveValue::Finite(0.0)
                } else {
                    ObjectiveValue::Infinite
                }
            }
        })
    }

    /// Exact minimizer of `f(u) + ||u - v||^2 / (2 tau)`.
    pub fn prox(&self, v: &[f64], tau: f64) -> Result<DVector<f64>> {
        self.check_len(v.len())?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(ApdError::InvalidParameter(format!(
                "prox step must be positive and finite, got {tau}"
            )));
        }
        Ok(match &self.kind {
            BlockKind::Zero => DVector::from_column_slice(v),
            BlockKind::WeightedL1 { weight } => {
                let t = tau * weight;
                DVector::from_iterator(v.len(), v.iter().map(|&vj| soft_threshold(vj, t)))
            }
            BlockKind::Quadratic { q_mat, q_vec } => {
                // (I + tau Q) u = v - tau q
                let n = self.dim;
                let lhs = DMatrix::identity(n, n) + q_mat * tau;
                let rhs = DVector::from_column_slice(v) - q_vec * tau;
                lhs.cholesky()
                    .ok_or_else(|| {
                        ApdError::InvalidProblem("I + tau Q is not positive definite".into())
                    })?
                    .solve(&rhs)
            }
            BlockKind::NonNegIndicator => {
                DVector::from_iterator(v.len(), v.iter().map(|&vj| vj.max(0.0)))
            }
        })
    }

    /// One element of the subdifferential at `u`; the minimum-norm element
    /// where the function is not differentiable. `None` outside the domain.
    pub fn subgradient(&self, u: &[f64]) -> Result<Option<DVector<f64>>> {
        self.check_len(u.len())?;
        Ok(match &self.kind {
            BlockKind::Zero => Some(DVector::zeros(self.dim)),
            BlockKind::WeightedL1 { weight } => Some(DVector::from_iterator(
                self.dim,
                u.iter().map(|&x| {
                    if x > 0.0 {
                        *weight
                    } else if x < 0.0 {
                        -*weight
                    } else {
                        0.0
                    }
                }),
            )),
            BlockKind::Quadratic { q_mat, q_vec } => {
                Some(q_mat * DVector::from_column_slice(u) + q_vec)
            }
            BlockKind::NonNegIndicator => {
                if u.iter().all(|&x| x >= 0.0) {
                    Some(DVector::zeros(self.dim))
                } else {
                    None
                }
            }
        })
    }

    /// Value of the Moreau envelope `min_u f(u) + ||u - x||^2 / (2 mu)`.
    pub fn envelope_value(&self, x: &[f64], mu: f64) -> Result<f64> {
        let p = self.prox(x, mu)?;
        let f = self
            .evaluate(p.as_slice())?
            .finite()
            .ok_or_else(|| ApdError::InvalidProblem("prox output left the block domain".into()))?;
        let dist2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(f + dist2 / (2.0 * mu))
    }

    /// The Moreau envelope written as a block of the same family, when it has
    /// one: zero stays zero, and a quadratic `(Q, q)` becomes
    /// `((I + mu Q)^-1 Q, (I + mu Q)^-1 q)` up to an additive constant.
    pub fn envelope_block(&self, mu: f64) -> Option<BlockFunction> {
        match &self.kind {
            BlockKind::Zero => Some(self.clone()),
            BlockKind::Quadratic { q_mat, q_vec } => {
                let n = self.dim;
                let lu = (DMatrix::identity(n, n) + q_mat * mu).lu();
                let q_env = lu.solve(q_mat)?;
                let q_env = (&q_env + q_env.transpose()) * 0.5;
                let q_vec_env = lu.solve(q_vec)?;
                BlockFunction::quadratic(q_env, q_vec_env).ok()
            }
            BlockKind::WeightedL1 { .. } | BlockKind::NonNegIndicator => None,
        }
    }

    /// Constant `c` with `envelope(x) = envelope_block(x) + c`, only defined for quadratics.
    #[cfg(test)]
    pub(crate) fn envelope_offset(&self, mu: f64) -> f64 {
        match &self.kind {
            BlockKind::Quadratic { q_mat, q_vec } => {
                // envelope(0) = f(u0) + |u0|^2/(2mu), u0 = -(I + mu Q)^-1 mu q
                let n = self.dim;
                let u0 = (DMatrix::identity(n, n) + q_mat * mu)
                    .lu()
                    .solve(&(q_vec * (-mu)))
                    .unwrap_or_else(|| DVector::zeros(n));
                0.5 * u0.dot(&(q_mat * &u0)) + q_vec.dot(&u0) + u0.norm_squared() / (2.0 * mu)
            }
            _ => 0.0,
        }
    }

    pub fn is_smooth(&self) -> bool {
        matches!(self.kind, BlockKind::Zero | BlockKind::Quadratic { .. })
    }
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

fn validate_psd(q: &DMatrix<f64>) -> Result<()> {
    let scale = q.amax().max(1.0);
    let asym = (q - q.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(ApdError::InvalidProblem(format!(
            "quadratic matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    let min_eig = q.clone().symmetric_eigenvalues().min();
    if min_eig < -1e-10 * scale {
        return Err(ApdError::InvalidProblem(format!(
            "quadratic matrix is not positive semidefinite (min eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}
