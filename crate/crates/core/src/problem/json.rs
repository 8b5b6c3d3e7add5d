//! JSON layout for instances and reference solutions.
//!
//! Matrices are written row-major as flat arrays; the shape follows from
//! `dim` and the length of `rhs`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{BlockFunction, BlockKind, ConstrainedProblem, PrimalDualPoint, ReferenceSolution};
use crate::error::{ApdError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDocument {
    pub blocks: Vec<BlockDocument>,
    pub rhs: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockDocument {
    pub kind: String,
    #[serde(default)]
    pub params: BlockParams,
    pub dim: usize,
    pub matrix: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_matrix: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_vector: Option<Vec<f64>>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter().copied());
    }
    out
}

fn from_row_major(rows: usize, cols: usize, data: &[f64], what: &str) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(ApdError::dim(what.to_string(), rows * cols, data.len()));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

impl From<&ConstrainedProblem> for ProblemDocument {
    fn from(p: &ConstrainedProblem) -> Self {
        let blocks = p
            .blocks()
            .iter()
            .map(|b| {
                let params = match b.function.kind() {
                    BlockKind::WeightedL1 { weight } => BlockParams {
                        weight: Some(*weight),
                        ..Default::default()
                    },
                    BlockKind::Quadratic { q_mat, q_vec } => BlockParams {
                        q_matrix: Some(row_major(q_mat)),
                        q_vector: Some(q_vec.iter().copied().collect()),
                        ..Default::default()
                    },
                    BlockKind::Zero | BlockKind::NonNegIndicator => BlockParams::default(),
                };
                BlockDocument {
                    kind: b.function.kind().name().to_string(),
                    params,
                    dim: b.function.dim(),
                    matrix: row_major(&b.matrix),
                }
            })
            .collect();
        ProblemDocument {
            blocks,
            rhs: p.rhs().iter().copied().collect(),
            metadata: p.metadata.clone(),
        }
    }
}

impl ProblemDocument {
    pub fn into_problem(self) -> Result<ConstrainedProblem> {
        let r = self.rhs.len();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.into_iter().enumerate() {
            let name = format!("block {}", i + 1);
            let p = b.params;
            let no_extra = |ok: bool| -> Result<()> {
                if ok {
                    Ok(())
                } else {
                    Err(ApdError::InvalidProblem(format!(
                        "{name}: unexpected params for kind {}",
                        b.kind
                    )))
                }
            };
            let function = match b.kind.as_str() {
                "zero" => {
                    no_extra(p.weight.is_none() && p.q_matrix.is_none() && p.q_vector.is_none())?;
                    BlockFunction::zero(b.dim)?
                }
                "indicator-nonneg" => {
                    no_extra(p.weight.is_none() && p.q_matrix.is_none() && p.q_vector.is_none())?;
                    BlockFunction::nonneg_indicator(b.dim)?
                }
                "weighted-l1" => {
                    no_extra(p.q_matrix.is_none() && p.q_vector.is_none())?;
                    let w = p.weight.ok_or_else(|| {
                        ApdError::InvalidProblem(format!("{name}: weighted-l1 needs params.weight"))
                    })?;
                    BlockFunction::weighted_l1(w, b.dim)?
                }
                "quadratic" => {
                    no_extra(p.weight.is_none())?;
                    let q = p.q_matrix.ok_or_else(|| {
                        ApdError::InvalidProblem(format!("{name}: quadratic needs params.q_matrix"))
                    })?;
                    let qv = p.q_vector.unwrap_or_else(|| vec![0.0; b.dim]);
                    if qv.len() != b.dim {
                        return Err(ApdError::dim(format!("{name} q_vector"), b.dim, qv.len()));
                    }
                    BlockFunction::quadratic(
                        from_row_major(b.dim, b.dim, &q, &format!("{name} q_matrix"))?,
                        DVector::from_vec(qv),
                    )?
                }
                other => {
                    return Err(ApdError::InvalidProblem(format!(
                        "{name}: unknown block kind {other:?}"
                    )))
                }
            };
            let matrix = from_row_major(r, b.dim, &b.matrix, &format!("{name} matrix"))?;
            blocks.push((function, matrix));
        }
        let mut problem = ConstrainedProblem::new(blocks, DVector::from_vec(self.rhs))?;
        problem.metadata = self.metadata;
        Ok(problem)
    }
}

impl ConstrainedProblem {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ProblemDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<ProblemDocument>(text)?.into_problem()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceDocument {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub objective_value: f64,
    pub tolerance: f64,
    pub provenance: String,
    pub dual_exact: bool,
}

impl From<&ReferenceSolution> for ReferenceDocument {
    fn from(r: &ReferenceSolution) -> Self {
        ReferenceDocument {
            x: r.point.x.iter().copied().collect(),
            lambda: r.point.lambda.iter().copied().collect(),
            objective_value: r.objective_value,
            tolerance: r.tolerance,
            provenance: r.provenance.clone(),
            dual_exact: r.dual_exact,
        }
    }
}

impl From<ReferenceDocument> for ReferenceSolution {
    fn from(d: ReferenceDocument) -> Self {
        ReferenceSolution {
            point: PrimalDualPoint::new(DVector::from_vec(d.x), DVector::from_vec(d.lambda)),
            objective_value: d.objective_value,
            tolerance: d.tolerance,
            provenance: d.provenance,
            dual_exact: d.dual_exact,
        }
    }
}

impl ReferenceSolution {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ReferenceDocument::from(
            self,
        ))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str::<ReferenceDocument>(text)?.into())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
