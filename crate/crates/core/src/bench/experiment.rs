//! Config-driven grid runs over `(algorithm, alpha, rho)` on one shared instance.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::{fit_rate, generate_lad, generate_quadratic_toy, ExperimentConfig, RunHistory};
use crate::error::{ApdError, Result};
use crate::flow::run_flow;
use crate::lpmm::{compute_reference, LpmmParams};
use crate::problem::{ConstrainedProblem, ReferenceSolution};
use crate::rates::{classify_regime, RateParams};
use crate::spectral::spectral_norm;
use crate::{apd, lpmm};

/// Iteration after which the gap envelope must be nonincreasing.
pub const ENVELOPE_BURN_IN: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellReport {
    pub name: String,
    pub algorithm: String,
    pub alpha: Option<f64>,
    pub rho: Option<f64>,
    /// "converged", "max_iter", "diverged" or "failed".
    pub status: String,
    pub error: Option<String>,
    pub iterations: usize,
    pub final_gap: Option<f64>,
    pub final_residual: Option<f64>,
    pub history_file: Option<String>,
    pub regime: Option<serde_json::Value>,
    pub predicted_rate: Option<f64>,
    pub fitted_slope: Option<f64>,
    pub fitted_r_squared: Option<f64>,
    pub envelope_monotone: Option<bool>,
    pub max_dual_identity_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub instance_id: String,
    pub kappa: f64,
    pub reference_provenance: String,
    pub reference_objective: f64,
    pub cells: Vec<CellReport>,
    pub diverged_cells: Vec<String>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "name",
            "algorithm",
            "alpha",
            "rho",
            "status",
            "iterations",
            "final_gap",
            "final_residual",
            "case",
            "predicted_rate",
            "fitted_slope",
            "fitted_r_squared",
            "envelope_monotone",
        ])?;
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.cells {
            let case = c
                .regime
                .as_ref()
                .and_then(|r| r.get("case"))
                .and_then(|v| v.as_str())
                .unwrap_or_default()
                .to_string();
            w.write_record([
                c.name.clone(),
                c.algorithm.clone(),
                f(c.alpha),
                f(c.rho),
                c.status.clone(),
                c.iterations.to_string(),
                f(c.final_gap),
                f(c.final_residual),
                case,
                f(c.predicted_rate),
                f(c.fitted_slope),
                f(c.fitted_r_squared),
                c.envelope_monotone
                    .map(|b| b.to_string())
                    .unwrap_or_default(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| ApdError::Config(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| ApdError::Config(e.to_string()))
    }
}

/// Local maxima of `|gap|` at steps past `after` never increase.
pub fn gap_envelope_monotone(history: &RunHistory, after: f64) -> bool {
    let gaps: Vec<f64> = history
        .rows
        .iter()
        .filter(|r| r.step >= after)
        .filter_map(|r| r.objective_gap.map(f64::abs))
        .collect();
    let mut last_peak = f64::INFINITY;
    for i in 0..gaps.len() {
        let left = if i == 0 {
            f64::NEG_INFINITY
        } else {
            gaps[i - 1]
        };
        let right = gaps.get(i + 1).copied().unwrap_or(f64::NEG_INFINITY);
        if gaps[i] >= left && gaps[i] >= right {
            if gaps[i] > last_peak {
                return false;
            }
            last_peak = gaps[i];
        }
    }
    true
}

/// Instance plus reference as built from the `[instance]` section.
pub fn build_instance(cfg: &ExperimentConfig) -> Result<(ConstrainedProblem, ReferenceSolution)> {
    match cfg.instance.kind.as_str() {
        "lad" => {
            let (p, _) = generate_lad(&cfg.instance.lad_spec())?;
            let l = &cfg.lpmm;
            let base = LpmmParams::defaults_for(&p, (l.reference_iter / 10).max(1))?;
            let params = LpmmParams {
                c: l.c,
                alpha_x: l.alpha_x.unwrap_or(base.alpha_x * l.c),
                alpha_y: l.alpha_y.unwrap_or(base.alpha_y * l.c),
                ..base
            };
            let params = LpmmParams::new(
                &p,
                params.c,
                params.alpha_x,
                params.alpha_y,
                params.max_iter,
            )?;
            let r = compute_reference(&p, &params, l.reference_iter)?;
            Ok((p, r))
        }
        "quadratic" => generate_quadratic_toy(cfg.instance.n, cfg.instance.seed),
        other => Err(ApdError::Config(format!("unknown instance kind {other:?}"))),
    }
}

struct Cell {
    algorithm: String,
    alpha: Option<f64>,
    rho: Option<f64>,
}

impl Cell {
    fn name(&self) -> String {
        match (self.alpha, self.rho) {
            (Some(a), Some(r)) => format!("{}_alpha{}_rho{}", self.algorithm, a, r),
            _ => self.algorithm.clone(),
        }
    }
}

fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for algo in &cfg.grid.algorithms {
        if algo == "lpmm" {
            out.push(Cell {
                algorithm: algo.clone(),
                alpha: None,
                rho: None,
            });
            continue;
        }
        for &rho in &cfg.grid.rho {
            for &alpha in &cfg.grid.alpha {
                out.push(Cell {
                    algorithm: algo.clone(),
                    alpha: Some(alpha),
                    rho: Some(rho),
                });
            }
        }
    }
    out
}

struct CellOutcome {
    history: Option<RunHistory>,
    status: &'static str,
    error: Option<String>,
    max_dual_identity_error: Option<f64>,
}

fn run_cell(
    cell: &Cell,
    cfg: &ExperimentConfig,
    problem: &ConstrainedProblem,
    reference: &ReferenceSolution,
    kappa: f64,
) -> CellOutcome {
    let failed = |e: ApdError| CellOutcome {
        status: if e.is_divergence() {
            "diverged"
        } else {
            "failed"
        },
        history: e.history().cloned(),
        error: Some(e.to_string()),
        max_dual_identity_error: None,
    };
    match cell.algorithm.as_str() {
        "apd" => {
            let (alpha, rho) = (cell.alpha.unwrap(), cell.rho.unwrap());
            let run = cfg
                .apd
                .params(alpha, rho, kappa)
                .and_then(|p| apd::solve(problem, &p, Some(reference)));
            match run {
                Ok(r) => CellOutcome {
                    status: if r.converged { "converged" } else { "max_iter" },
                    max_dual_identity_error: Some(r.max_dual_identity_error),
                    history: Some(r.history),
                    error: None,
                },
                Err(e) => failed(e),
            }
        }
        "lpmm" => {
            let l = &cfg.lpmm;
            let run = LpmmParams::defaults_for(problem, l.max_iter)
                .and_then(|base| {
                    LpmmParams::new(
                        problem,
                        l.c,
                        l.alpha_x.unwrap_or(base.alpha_x * l.c),
                        l.alpha_y.unwrap_or(base.alpha_y * l.c),
                        l.max_iter,
                    )
                })
                .map(|p| LpmmParams {
                    tol_primal: l.tol_primal,
                    tol_gap: l.tol_gap,
                    ..p
                })
                .and_then(|p| {
                    lpmm::solve_from(
                        problem,
                        &p,
                        lpmm::LpmmState::zeros(problem)?,
                        Some(reference),
                        l.record_every,
                    )
                });
            match run {
                Ok(r) => CellOutcome {
                    status: if r.converged { "converged" } else { "max_iter" },
                    history: Some(r.history),
                    error: None,
                    max_dual_identity_error: None,
                },
                Err(e) => failed(e),
            }
        }
        "flow" => {
            let (alpha, rho) = (cell.alpha.unwrap(), cell.rho.unwrap());
            let run = RateParams::new(alpha, rho, cfg.grid.gamma, kappa).and_then(|params| {
                let z = DVector::zeros(problem.dim());
                let l0 = DVector::zeros(problem.num_rows());
                run_flow(
                    problem,
                    &params,
                    &cfg.flow.smoothing(),
                    reference,
                    &z,
                    &z,
                    &l0,
                )
            });
            match run {
                Ok(h) => CellOutcome {
                    status: "converged",
                    history: Some(h),
                    error: None,
                    max_dual_identity_error: None,
                },
                Err(e) => failed(e),
            }
        }
        other => failed(ApdError::Config(format!("unknown algorithm {other:?}"))),
    }
}

/// Runs every cell (in parallel), writes `instance.json`, `reference.json`,
/// `histories/<cell>.csv`, `report.json` and `report.csv` under `out_dir`.
/// Individual cell failures are recorded and do not stop the grid.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (problem, reference) = build_instance(cfg)?;
    let kappa = spectral_norm(&problem.stacked_matrix())?;
    std::fs::create_dir_all(out_dir.join("histories"))?;
    problem.save(&out_dir.join("instance.json"))?;
    reference.save(&out_dir.join("reference.json"))?;

    let cells = cells(cfg);
    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|c| run_cell(c, cfg, &problem, &reference, kappa))
        .collect();

    let mut reports = Vec::with_capacity(cells.len());
    for (cell, out) in cells.iter().zip(outcomes) {
        let name = cell.name();
        let mut history_file = None;
        if let Some(h) = &out.history {
            let rel = PathBuf::from("histories").join(format!("{name}.csv"));
            h.save_csv(&out_dir.join(&rel))?;
            history_file = Some(rel.to_string_lossy().into_owned());
        }
        let last = out.history.as_ref().and_then(|h| h.last().copied());
        let regime = match (cell.alpha, cell.rho) {
            (Some(a), Some(r)) => RateParams::new(a, r, cfg.grid.gamma, kappa)
                .ok()
                .map(|p| classify_regime(&p)),
            _ => None,
        };
        let window = cfg.grid.fit_window.map(|[a, b]| (a, b)).unwrap_or_else(|| {
            let end = match cell.algorithm.as_str() {
                "flow" => cfg.flow.t_end,
                "lpmm" => cfg.lpmm.max_iter as f64,
                _ => cfg.apd.max_iter as f64,
            };
            (10f64.min(end), end)
        });
        let fit = out.history.as_ref().and_then(|h| fit_rate(h, window).ok());
        let envelope = match (&out.history, out.status) {
            (Some(h), "converged") if cell.algorithm != "flow" => {
                Some(gap_envelope_monotone(h, ENVELOPE_BURN_IN))
            }
            _ => None,
        };
        reports.push(CellReport {
            name,
            algorithm: cell.algorithm.clone(),
            alpha: cell.alpha,
            rho: cell.rho,
            status: out.status.to_string(),
            error: out.error,
            iterations: last.map(|r| r.step as usize).unwrap_or(0),
            final_gap: last.and_then(|r| r.objective_gap),
            final_residual: last.map(|r| r.primal_residual),
            history_file,
            predicted_rate: regime.as_ref().map(|r| r.predicted_rate),
            regime: regime.map(|r| r.to_json()),
            fitted_slope: fit.map(|f| f.slope),
            fitted_r_squared: fit.map(|f| f.r_squared),
            envelope_monotone: envelope,
            max_dual_identity_error: out.max_dual_identity_error,
        });
    }
    let diverged_cells = reports
        .iter()
        .filter(|c| c.status == "diverged")
        .map(|c| c.name.clone())
        .collect();
    let report = ExperimentReport {
        instance_id: problem.metadata.get("id").cloned().unwrap_or_default(),
        kappa,
        reference_provenance: reference.provenance.clone(),
        reference_objective: reference.objective_value,
        cells: reports,
        diverged_cells,
    };
    std::fs::write(out_dir.join("report.json"), report.to_json()? + "\n")?;
    std::fs::write(out_dir.join("report.csv"), report.to_csv()?)?;
    Ok(report)
}
