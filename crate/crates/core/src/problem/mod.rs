//! Separable convex problems with linear equality constraints:
//!
//! `min sum_i f_i(x_i)  s.t.  sum_i A_i x_i = b`
//!
//! together with their Lagrangian `F(x) + <lambda, Ax - b>`, residuals and
//! reference saddle points.

mod block;
mod json;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

pub use block::{soft_threshold, BlockFunction, BlockKind, ObjectiveValue};
pub use json::{ProblemDocument, ReferenceDocument};

use crate::error::{ApdError, Result};

/// A block function together with its constraint matrix `A_i` (r x n_i).
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemBlock {
    pub function: BlockFunction,
    pub matrix: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedProblem {
    blocks: Vec<ProblemBlock>,
    rhs: DVector<f64>,
    offsets: Vec<usize>,
    /// Free-form provenance for generated instances.
    pub metadata: BTreeMap<String, String>,
}

impl ConstrainedProblem {
    pub fn new(blocks: Vec<(BlockFunction, DMatrix<f64>)>, rhs: DVector<f64>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(ApdError::InvalidProblem(
                "problem needs at least one block".into(),
            ));
        }
        let r = rhs.len();
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        let mut offset = 0;
        offsets.push(0);
        for (i, (f, a)) in blocks.iter().enumerate() {
            if a.nrows() != r {
                return Err(ApdError::dim(format!("rows of A^{}", i + 1), r, a.nrows()));
            }
            if a.ncols() != f.dim() {
                return Err(ApdError::dim(
                    format!("columns of A^{}", i + 1),
                    f.dim(),
                    a.ncols(),
                ));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(ApdError::InvalidProblem(format!(
                    "A^{} has non-finite entries",
                    i + 1
                )));
            }
            offset += f.dim();
            offsets.push(offset);
        }
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(ApdError::InvalidProblem("b has non-finite entries".into()));
        }
        for row in 0..r {
            let all_zero = blocks
                .iter()
                .all(|(_, a)| a.row(row).iter().all(|&v| v == 0.0));
            if all_zero {
                return Err(ApdError::InvalidProblem(format!(
                    "row {row} of the stacked constraint matrix is zero"
                )));
            }
        }
        Ok(ConstrainedProblem {
            blocks: blocks
                .into_iter()
                .map(|(function, matrix)| ProblemBlock { function, matrix })
                .collect(),
            rhs,
            offsets,
            metadata: BTreeMap::new(),
        })
    }

    pub fn with_metadata(mut self, key: &str, value: impl Into<String>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    pub fn blocks(&self) -> &[ProblemBlock] {
        &self.blocks
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Number of constraint rows `r`.
    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    /// Total primal dimension `N`.
    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn block_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// `[A_1 ... A_m]`.
    pub fn stacked_matrix(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.num_rows(), self.dim());
        for (i, b) in self.blocks.iter().enumerate() {
            out.view_mut((0, self.offsets[i]), b.matrix.shape())
                .copy_from(&b.matrix);
        }
        out
    }

    fn check_primal(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(ApdError::dim("primal vector", self.dim(), x.len()));
        }
        Ok(())
    }

    fn check_dual(&self, lambda: &DVector<f64>) -> Result<()> {
        if lambda.len() != self.num_rows() {
            return Err(ApdError::dim("dual vector", self.num_rows(), lambda.len()));
        }
        Ok(())
    }

    /// `sum_i A_i x_i`.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_primal(x)?;
        let mut out = DVector::zeros(self.num_rows());
        for (i, b) in self.blocks.iter().enumerate() {
            out.gemv(1.0, &b.matrix, &x.rows_range(self.block_range(i)), 1.0);
        }
        Ok(out)
    }

    /// `A' lambda`, concatenated over blocks.
    pub fn apply_transpose(&self, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dual(lambda)?;
        let mut out = DVector::zeros(self.dim());
        for (i, b) in self.blocks.iter().enumerate() {
            out.rows_range_mut(self.block_range(i))
                .gemv_tr(1.0, &b.matrix, lambda, 0.0);
        }
        Ok(out)
    }

    /// `F(x) = sum_i f_i(x_i)`.
    pub fn evaluate_objective(&self, x: &DVector<f64>) -> Result<ObjectiveValue> {
        self.check_primal(x)?;
        let mut total = ObjectiveValue::Finite(0.0);
        for (i, b) in self.blocks.iter().enumerate() {
            let xi = &x.as_slice()[self.block_range(i)];
            let v = b.function.evaluate(xi).map_err(|e| match e {
                ApdError::DimensionMismatch { expected, got, .. } => {
                    ApdError::dim(format!("block {}", i + 1), expected, got)
                }
                other => other,
            })?;
            total = total + v;
        }
        Ok(total)
    }

    /// `L(x, lambda) = F(x) + <lambda, Ax - b>`.
    pub fn evaluate_lagrangian(&self, pt: &PrimalDualPoint) -> Result<ObjectiveValue> {
        self.check_dual(&pt.lambda)?;
        let f = self.evaluate_objective(&pt.x)?;
        let (_, per_row) = self.residuals(&pt.x)?;
        Ok(f + pt.lambda.dot(&per_row))
    }

    /// `(||Ax - b||, Ax - b)`.
    pub fn residuals(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let per_row = self.apply(x)? - &self.rhs;
        Ok((per_row.norm(), per_row))
    }

    /// One subgradient of `F` at `x`, block by block; `None` outside `dom F`.
    pub fn subgradient(&self, x: &DVector<f64>) -> Result<Option<DVector<f64>>> {
        self.check_primal(x)?;
        let mut out = DVector::zeros(self.dim());
        for (i, b) in self.blocks.iter().enumerate() {
            let range = self.block_range(i);
            match b.function.subgradient(&x.as_slice()[range.clone()])? {
                Some(g) => out.rows_range_mut(range).copy_from(&g),
                None => return Ok(None),
            }
        }
        Ok(Some(out))
    }

    /// Sum of block Moreau envelopes at `x`.
    pub fn envelope_objective(&self, x: &DVector<f64>, mu: f64) -> Result<f64> {
        self.check_primal(x)?;
        self.blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                b.function
                    .envelope_value(&x.as_slice()[self.block_range(i)], mu)
            })
            .sum()
    }

    /// Gradient of the summed Moreau envelopes, `(x - prox_{mu F}(x)) / mu`.
    pub fn envelope_gradient(&self, x: &DVector<f64>, mu: f64) -> Result<DVector<f64>> {
        self.check_primal(x)?;
        let mut out = DVector::zeros(self.dim());
        for (i, b) in self.blocks.iter().enumerate() {
            let range = self.block_range(i);
            let xi = &x.as_slice()[range.clone()];
            let p = b.function.prox(xi, mu)?;
            let g = (DVector::from_column_slice(xi) - p) / mu;
            out.rows_range_mut(range).copy_from(&g);
        }
        Ok(out)
    }

    /// The problem with every block replaced by its Moreau envelope with
    /// parameter `mu`. Only smooth block kinds have a closed form here.
    /// The returned objective differs from the envelope by a constant; see
    /// [`ConstrainedProblem::envelope_objective`] for exact values.
    pub fn smoothed(&self, mu: f64) -> Result<ConstrainedProblem> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                b.function
                    .envelope_block(mu)
                    .map(|f| (f, b.matrix.clone()))
                    .ok_or_else(|| {
                        ApdError::Unsupported(format!(
                            "no closed-form envelope for {} blocks",
                            b.function.kind().name()
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut p = ConstrainedProblem::new(blocks, self.rhs.clone())?;
        p.metadata = self.metadata.clone();
        Ok(p)
    }

    /// Scale every `A_i` and `b` by `factor`, leaving the feasible set unchanged.
    pub fn rescaled(&self, factor: f64) -> Result<ConstrainedProblem> {
        if !(factor.is_finite() && factor != 0.0) {
            return Err(ApdError::InvalidParameter(format!(
                "bad rescale factor {factor}"
            )));
        }
        let blocks = self
            .blocks
            .iter()
            .map(|b| (b.function.clone(), &b.matrix * factor))
            .collect();
        let mut p = ConstrainedProblem::new(blocks, &self.rhs * factor)?;
        p.metadata = self.metadata.clone();
        Ok(p)
    }

    /// Borrow the two blocks of an `m = 2` problem as `(f, A, g, B)`.
    pub fn two_blocks(&self) -> Result<TwoBlockView<'_>> {
        if self.blocks.len() != 2 {
            return Err(ApdError::Unsupported(format!(
                "two-block splitting needs exactly 2 blocks, problem has {}",
                self.blocks.len()
            )));
        }
        Ok(TwoBlockView {
            f: &self.blocks[0].function,
            a: &self.blocks[0].matrix,
            g: &self.blocks[1].function,
            b: &self.blocks[1].matrix,
            rhs: &self.rhs,
        })
    }

    /// Saddle point from the KKT system `[Q A'; A 0] [x; l] = [-q; b]`;
    /// only for problems whose blocks are all zero or quadratic.
    pub fn quadratic_saddle_point(&self) -> Result<ReferenceSolution> {
        let n = self.dim();
        let r = self.num_rows();
        let mut kkt = DMatrix::zeros(n + r, n + r);
        let mut rhs = DVector::zeros(n + r);
        for (i, b) in self.blocks.iter().enumerate() {
            let o = self.offsets[i];
            match b.function.kind() {
                BlockKind::Zero => {}
                BlockKind::Quadratic { q_mat, q_vec } => {
                    kkt.view_mut((o, o), q_mat.shape()).copy_from(q_mat);
                    rhs.rows_mut(o, q_vec.len()).copy_from(&(-q_vec));
                }
                other => {
                    return Err(ApdError::Unsupported(format!(
                        "KKT solve needs smooth blocks, found {}",
                        other.name()
                    )))
                }
            }
        }
        let a = self.stacked_matrix();
        kkt.view_mut((n, 0), (r, n)).copy_from(&a);
        kkt.view_mut((0, n), (n, r)).copy_from(&a.transpose());
        rhs.rows_mut(n, r).copy_from(&self.rhs);
        let sol = kkt
            .lu()
            .solve(&rhs)
            .ok_or_else(|| ApdError::InvalidProblem("singular KKT system".into()))?;
        let x = sol.rows(0, n).into_owned();
        let lambda = sol.rows(n, r).into_owned();
        ReferenceSolution::from_point(self, PrimalDualPoint { x, lambda }, "kkt-analytic", true)
    }
}

/// Borrowed view of a two-block problem `f(x) + g(y)` s.t. `Ax + By = b`.
#[derive(Debug, Clone, Copy)]
pub struct TwoBlockView<'a> {
    pub f: &'a BlockFunction,
    pub a: &'a DMatrix<f64>,
    pub g: &'a BlockFunction,
    pub b: &'a DMatrix<f64>,
    pub rhs: &'a DVector<f64>,
}

/// `(x, lambda)` with `x` the concatenation of all blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualPoint {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
}

impl PrimalDualPoint {
    pub fn new(x: DVector<f64>, lambda: DVector<f64>) -> Self {
        PrimalDualPoint { x, lambda }
    }

    pub fn zeros(problem: &ConstrainedProblem) -> Self {
        PrimalDualPoint {
            x: DVector::zeros(problem.dim()),
            lambda: DVector::zeros(problem.num_rows()),
        }
    }

    /// Split `x` into per-block vectors.
    pub fn split(&self, problem: &ConstrainedProblem) -> Result<Vec<DVector<f64>>> {
        problem.check_primal(&self.x)?;
        Ok((0..problem.num_blocks())
            .map(|i| self.x.rows_range(problem.block_range(i)).into_owned())
            .collect())
    }

    /// Inverse of [`PrimalDualPoint::split`].
    pub fn assemble(parts: &[DVector<f64>], lambda: DVector<f64>) -> Self {
        let x = DVector::from_iterator(
            parts.iter().map(|p| p.len()).sum(),
            parts.iter().flat_map(|p| p.iter().copied()),
        );
        PrimalDualPoint { x, lambda }
    }
}

/// A (numerically) verified saddle point `(x*, lambda*)` with `F* = F(x*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub point: PrimalDualPoint,
    pub objective_value: f64,
    pub tolerance: f64,
    pub provenance: String,
    /// False when `lambda*` is only the last iterate of an iterative method.
    pub dual_exact: bool,
}

impl ReferenceSolution {
    /// Build a reference from a point; the tolerance is its feasibility residual.
    pub fn from_point(
        problem: &ConstrainedProblem,
        point: PrimalDualPoint,
        provenance: &str,
        dual_exact: bool,
    ) -> Result<Self> {
        problem.check_dual(&point.lambda)?;
        let objective_value = problem
            .evaluate_objective(&point.x)?
            .finite()
            .ok_or_else(|| ApdError::InvalidProblem("reference point is outside dom F".into()))?;
        let (res, _) = problem.residuals(&point.x)?;
        Ok(ReferenceSolution {
            point,
            objective_value,
            tolerance: res.max(f64::EPSILON),
            provenance: provenance.to_string(),
            dual_exact,
        })
    }

    pub fn validate(&self, problem: &ConstrainedProblem) -> Result<()> {
        let (res, _) = problem.residuals(&self.point.x)?;
        if res > self.tolerance {
            return Err(ApdError::InvalidProblem(format!(
                "reference residual {res:e} exceeds its tolerance {:e}",
                self.tolerance
            )));
        }
        let f = problem.evaluate_objective(&self.point.x)?.to_f64();
        if (f - self.objective_value).abs() > 1e-12 * (1.0 + f.abs()) {
            return Err(ApdError::InvalidProblem(format!(
                "reference objective {} does not match F(x*) = {f}",
                self.objective_value
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_problem(f: BlockFunction, b: Vec<f64>) -> ConstrainedProblem {
        let n = f.dim();
        ConstrainedProblem::new(vec![(f, DMatrix::identity(n, n))], DVector::from_vec(b)).unwrap()
    }

    #[test]
    fn objective_examples() {
        let p = identity_problem(BlockFunction::zero(2).unwrap(), vec![0.0, 0.0]);
        let x = DVector::from_vec(vec![5.0, -7.0]);
        assert_eq!(
            p.evaluate_objective(&x).unwrap(),
            ObjectiveValue::Finite(0.0)
        );

        let p = identity_problem(BlockFunction::weighted_l1(0.1, 2).unwrap(), vec![0.0, 0.0]);
        let v = p
            .evaluate_objective(&DVector::from_vec(vec![1.0, -2.0]))
            .unwrap();
        assert!((v.to_f64() - 0.3).abs() < 1e-15);

        let p = identity_problem(BlockFunction::half_squared_norm(2).unwrap(), vec![0.0, 0.0]);
        let v = p
            .evaluate_objective(&DVector::from_vec(vec![3.0, 4.0]))
            .unwrap();
        assert_eq!(v, ObjectiveValue::Finite(12.5));
    }

    #[test]
    fn dimension_errors_name_the_block() {
        let p = ConstrainedProblem::new(
            vec![
                (BlockFunction::zero(2).unwrap(), DMatrix::identity(2, 2)),
                (
                    BlockFunction::zero(1).unwrap(),
                    DMatrix::from_element(2, 1, 1.0),
                ),
            ],
            DVector::zeros(2),
        )
        .unwrap();
        match p.evaluate_objective(&DVector::zeros(4)) {
            Err(ApdError::DimensionMismatch { context, .. }) => {
                assert_eq!(context, "primal vector")
            }
            other => panic!("{other:?}"),
        }
        let bad = ConstrainedProblem::new(
            vec![(BlockFunction::zero(2).unwrap(), DMatrix::identity(3, 2))],
            DVector::zeros(2),
        );
        match bad {
            Err(ApdError::DimensionMismatch { context, .. }) => assert!(context.contains("A^1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_zero_rows() {
        let mut a = DMatrix::identity(2, 2);
        a[(1, 1)] = 0.0;
        let err = ConstrainedProblem::new(
            vec![(BlockFunction::zero(2).unwrap(), a)],
            DVector::zeros(2),
        );
        assert!(matches!(err, Err(ApdError::InvalidProblem(_))));
    }

    #[test]
    fn lagrangian_examples() {
        let p = identity_problem(BlockFunction::zero(2).unwrap(), vec![0.0, 0.0]);
        let pt = PrimalDualPoint::new(
            DVector::from_vec(vec![1.0, 1.0]),
            DVector::from_vec(vec![2.0, 3.0]),
        );
        assert_eq!(
            p.evaluate_lagrangian(&pt).unwrap(),
            ObjectiveValue::Finite(5.0)
        );

        let p = identity_problem(BlockFunction::weighted_l1(1.0, 2).unwrap(), vec![1.0, -1.0]);
        let pt = PrimalDualPoint::new(
            DVector::from_vec(vec![1.0, -1.0]),
            DVector::from_vec(vec![9.0, -4.0]),
        );
        assert_eq!(
            p.evaluate_lagrangian(&pt).unwrap(),
            ObjectiveValue::Finite(2.0)
        );
    }

    #[test]
    fn residual_examples() {
        let p = identity_problem(BlockFunction::zero(2).unwrap(), vec![1.0, 0.0]);
        let (norm, rows) = p.residuals(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(norm, 1.0);
        assert_eq!(rows.as_slice(), &[0.0, 1.0]);
        let (norm, _) = p.residuals(&DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(norm, 0.0);
    }

    #[test]
    fn residuals_match_naive_multiply() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rand_mat =
            |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let (a1, a2) = (rand_mat(4, 3), rand_mat(4, 2));
        let b: Vec<f64> = (0..4).map(|i| i as f64 * 0.3 - 0.5).collect();
        let x: Vec<f64> = vec![0.7, -1.1, 0.2, 2.0, -0.4];
        let p = ConstrainedProblem::new(
            vec![
                (BlockFunction::zero(3).unwrap(), a1.clone()),
                (BlockFunction::zero(2).unwrap(), a2.clone()),
            ],
            DVector::from_vec(b.clone()),
        )
        .unwrap();
        let (_, rows) = p.residuals(&DVector::from_vec(x.clone())).unwrap();
        for i in 0..4 {
            let mut acc = -b[i];
            for j in 0..3 {
                acc += a1[(i, j)] * x[j];
            }
            for j in 0..2 {
                acc += a2[(i, j)] * x[3 + j];
            }
            assert!((acc - rows[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn kkt_saddle_point_of_one_dimensional_toy() {
        let p = identity_problem(BlockFunction::half_squared_norm(1).unwrap(), vec![1.0]);
        let r = p.quadratic_saddle_point().unwrap();
        assert!((r.point.x[0] - 1.0).abs() < 1e-14);
        assert!((r.point.lambda[0] + 1.0).abs() < 1e-14);
        assert!((r.objective_value - 0.5).abs() < 1e-14);
        r.validate(&p).unwrap();
        let lag = p.evaluate_lagrangian(&r.point).unwrap().to_f64();
        assert!((lag - r.objective_value).abs() < 1e-10);
    }

    #[test]
    fn smoothed_requires_closed_form() {
        let p = identity_problem(BlockFunction::weighted_l1(1.0, 1).unwrap(), vec![1.0]);
        assert!(matches!(p.smoothed(0.1), Err(ApdError::Unsupported(_))));
        let q = identity_problem(BlockFunction::half_squared_norm(1).unwrap(), vec![1.0]);
        let s = q.smoothed(0.5).unwrap();
        let x = DVector::from_vec(vec![0.8]);
        assert!(
            (s.evaluate_objective(&x).unwrap().to_f64() - q.envelope_objective(&x, 0.5).unwrap())
                .abs()
                < 1e-14
        );
    }

    proptest! {
        #[test]
        fn split_then_assemble_is_identity(x in proptest::collection::vec(-10.0..10.0f64, 5)) {
            let p = ConstrainedProblem::new(
                vec![
                    (BlockFunction::zero(2).unwrap(), DMatrix::from_element(1, 2, 1.0)),
                    (BlockFunction::zero(3).unwrap(), DMatrix::from_element(1, 3, 1.0)),
                ],
                DVector::zeros(1),
            ).unwrap();
            let pt = PrimalDualPoint::new(DVector::from_vec(x), DVector::zeros(1));
            let parts = pt.split(&p).unwrap();
            prop_assert_eq!(parts.len(), 2);
            prop_assert_eq!(PrimalDualPoint::assemble(&parts, DVector::zeros(1)), pt);
        }

        #[test]
        fn lagrangian_is_affine_in_the_dual(
            l1 in proptest::collection::vec(-5.0..5.0f64, 2),
            l2 in proptest::collection::vec(-5.0..5.0f64, 2),
            t in -3.0..3.0f64,
        ) {
            let p = identity_problem(BlockFunction::weighted_l1(0.5, 2).unwrap(), vec![0.3, -0.2]);
            let x = DVector::from_vec(vec![1.5, -0.25]);
            let f = p.evaluate_objective(&x).unwrap().to_f64();
            let lag = |l: &DVector<f64>| {
                p.evaluate_lagrangian(&PrimalDualPoint::new(x.clone(), l.clone())).unwrap().to_f64() - f
            };
            let (l1, l2) = (DVector::from_vec(l1), DVector::from_vec(l2));
            let mix = &l1 * t + &l2 * (1.0 - t);
            let lhs = lag(&mix);
            let rhs = t * lag(&l1) + (1.0 - t) * lag(&l2);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
