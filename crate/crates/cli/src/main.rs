//! `apd` command line: instance generation, single runs, rate analysis,
//! fitting, comparison and config-driven experiments.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid input, 3 solver divergence.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use apd_core::apd::{self, ApdParams};
use apd_core::bench::{
    fit_rate, generate_lad, generate_quadratic_toy, run_experiment, ExperimentConfig, LadSpec,
    RunHistory,
};
use apd_core::flow::{run_flow, SmoothingConfig};
use apd_core::lpmm::{self, compute_reference, LpmmParams};
use apd_core::problem::{ConstrainedProblem, ReferenceSolution};
use apd_core::rates::{classify_regime, RateParams};
use apd_core::spectral::spectral_norm;
use apd_core::{ApdError, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "apd",
    version,
    about = "Accelerated primal-dual flow and solver toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded instance as JSON.
    Generate(GenerateArgs),
    /// Run APD or the linearized baseline on an instance.
    Solve(SolveArgs),
    /// Integrate the smoothed continuous flow.
    Flow(FlowArgs),
    /// Classify the convergence regime of a parameter set.
    Analyze(AnalyzeArgs),
    /// Fit a log-log rate to a history CSV.
    Fit(FitArgs),
    /// Summarize several history CSVs side by side.
    Compare(CompareArgs),
    /// Run a TOML experiment grid.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Lad,
    Quadratic,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(value_enum)]
    kind: Kind,
    #[arg(long, default_value_t = 60)]
    m: usize,
    #[arg(long, default_value_t = 30)]
    n: usize,
    #[arg(long, default_value_t = 6)]
    s: usize,
    #[arg(long, default_value_t = 0.3)]
    density: f64,
    #[arg(long, default_value_t = 0.01)]
    noise_level: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write a reference solution (closed form for quadratic, long LPMM run for LAD).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Length of the LPMM reference run for LAD instances.
    #[arg(long, default_value_t = 200_000)]
    reference_iter: usize,
    /// Write the planted LAD signal as a JSON array.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Apd,
    Lpmm,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, value_enum, default_value_t = Algo::Apd)]
    algo: Algo,
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = 3.0)]
    alpha: f64,
    #[arg(long, default_value_t = 3.0)]
    rho: f64,
    /// Defaults to 1 / kappa of the stacked constraint matrix.
    #[arg(long)]
    h: Option<f64>,
    /// Defaults to 1 / rho.
    #[arg(long)]
    sigma0: Option<f64>,
    #[arg(long, default_value_t = 5000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol_primal: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol_gap: f64,
    #[arg(long, default_value_t = 1e-8)]
    inner_tol: f64,
    #[arg(long, default_value_t = 500)]
    inner_max: usize,
    /// Keep sigma fixed.
    #[arg(long)]
    no_penalty: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// LPMM penalty.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 1)]
    record_every: usize,
    /// History CSV destination.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FlowArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Saddle point of the smoothed problem; computed in closed form when
    /// every block is quadratic and this is omitted.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = 3.0)]
    alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    rho: f64,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1e-3)]
    mu: f64,
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long, default_value_t = 1.0)]
    t0: f64,
    #[arg(long, default_value_t = 10.0)]
    t_end: f64,
    #[arg(long, default_value_t = 10)]
    record_every: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    rho: f64,
    #[arg(long)]
    gamma: f64,
    /// Spectral norm of the stacked constraint matrix.
    #[arg(
        long,
        conflicts_with = "instance",
        required_unless_present = "instance"
    )]
    kappa: Option<f64>,
    /// Read kappa from an instance file.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Override the default theta = alpha rho / 4.
    #[arg(long)]
    theta: Option<f64>,
    /// Growth exponent and constant, both required together.
    #[arg(long, requires = "growth_k")]
    growth_r: Option<f64>,
    #[arg(long, requires = "growth_r")]
    growth_k: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    history: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    start: f64,
    /// Defaults to the last step in the history.
    #[arg(long)]
    end: Option<f64>,
}

#[derive(Args)]
struct CompareArgs {
    /// History CSVs; repeat the flag.
    #[arg(long = "history", required = true)]
    histories: Vec<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    start: f64,
    #[arg(long)]
    end: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn load_problem(path: &Path) -> Result<ConstrainedProblem> {
    ConstrainedProblem::load(path)
}

fn stacked_kappa(problem: &ConstrainedProblem) -> Result<f64> {
    spectral_norm(&problem.stacked_matrix())
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn save_history(history: &RunHistory, out: Option<&Path>) -> Result<()> {
    if let Some(path) = out {
        history.save_csv(path)?;
    }
    Ok(())
}

/// On a failed run, write whatever history the error carries before passing it on.
fn keep_partial<T>(result: Result<T>, out: Option<&Path>) -> Result<T> {
    if let Err(e) = &result {
        if let Some(h) = e.history() {
            save_history(h, out)?;
        }
    }
    result
}

fn generate(a: GenerateArgs) -> Result<()> {
    let (problem, reference) = match a.kind {
        Kind::Lad => {
            let spec = LadSpec {
                m: a.m,
                n: a.n,
                s: a.s,
                density: a.density,
                noise_level: a.noise_level,
                delta: a.delta,
                seed: a.seed,
            };
            let (problem, truth) = generate_lad(&spec)?;
            if let Some(path) = &a.truth {
                let v: Vec<f64> = truth.iter().copied().collect();
                std::fs::write(path, serde_json::to_string(&v)? + "\n")?;
            }
            let reference = match &a.reference {
                Some(_) => {
                    let params =
                        LpmmParams::defaults_for(&problem, (a.reference_iter / 10).max(1))?;
                    Some(compute_reference(&problem, &params, a.reference_iter)?)
                }
                None => None,
            };
            (problem, reference)
        }
        Kind::Quadratic => {
            let (p, r) = generate_quadratic_toy(a.n, a.seed)?;
            (p, Some(r))
        }
    };
    problem.save(&a.out)?;
    if let (Some(path), Some(r)) = (&a.reference, &reference) {
        r.save(path)?;
    }
    print_json(&json!({
        "instance": a.out,
        "id": problem.metadata.get("id"),
        "rows": problem.num_rows(),
        "dim": problem.dim(),
        "kappa": stacked_kappa(&problem)?,
        "reference_objective": reference.as_ref().map(|r| r.objective_value),
    }))
}

fn solve(a: SolveArgs) -> Result<()> {
    let problem = load_problem(&a.instance)?;
    let reference = a
        .reference
        .as_deref()
        .map(ReferenceSolution::load)
        .transpose()?;
    let reference = reference.as_ref();
    match a.algo {
        Algo::Apd => {
            let mut params = ApdParams::for_problem(&problem, a.alpha, a.rho)?;
            if let Some(h) = a.h {
                params.h = h;
            }
            params.sigma0 = a.sigma0.unwrap_or(1.0 / a.rho);
            params.max_iter = a.max_iter;
            params.tol_primal = a.tol_primal;
            params.tol_gap = a.tol_gap;
            params.inner_tol = a.inner_tol;
            params.inner_max = a.inner_max;
            params.penalty_policy.enabled = !a.no_penalty;
            params.seed = a.seed;
            params.validate()?;
            let run = keep_partial(apd::solve(&problem, &params, reference), a.out.as_deref())?;
            save_history(&run.history, a.out.as_deref())?;
            let last = run.history.last();
            print_json(&json!({
                "algorithm": "apd",
                "iterations": run.state.k - 1,
                "converged": run.converged,
                "objective_gap": last.and_then(|r| r.objective_gap),
                "primal_residual": last.map(|r| r.primal_residual),
                "sigma": run.state.sigma_k,
                "max_dual_identity_error": run.max_dual_identity_error,
                "inner_warnings": run.inner_warnings,
            }))
        }
        Algo::Lpmm => {
            let base = LpmmParams::defaults_for(&problem, a.max_iter)?;
            let mut params = LpmmParams::new(
                &problem,
                a.c,
                base.alpha_x * a.c,
                base.alpha_y * a.c,
                a.max_iter,
            )?;
            params.tol_primal = a.tol_primal;
            params.tol_gap = a.tol_gap;
            let start = lpmm::LpmmState::zeros(&problem)?;
            let run = keep_partial(
                lpmm::solve_from(&problem, &params, start, reference, a.record_every),
                a.out.as_deref(),
            )?;
            save_history(&run.history, a.out.as_deref())?;
            let last = run.history.last();
            print_json(&json!({
                "algorithm": "lpmm",
                "iterations": run.state.k,
                "converged": run.converged,
                "objective_gap": last.and_then(|r| r.objective_gap),
                "primal_residual": last.map(|r| r.primal_residual),
            }))
        }
    }
}

fn flow(a: FlowArgs) -> Result<()> {
    let problem = load_problem(&a.instance)?;
    let reference = match &a.reference {
        Some(path) => ReferenceSolution::load(path)?,
        None => problem
            .smoothed(a.mu)?
            .quadratic_saddle_point()
            .map_err(|e| match e {
                ApdError::Unsupported(msg) => ApdError::Unsupported(format!(
                    "{msg}; pass --reference for problems with nonsmooth blocks"
                )),
                other => other,
            })?,
    };
    let params = RateParams::new(a.alpha, a.rho, a.gamma, stacked_kappa(&problem)?)?;
    let cfg = SmoothingConfig {
        mu: a.mu,
        integrator_step: a.step,
        t0: a.t0,
        t_end: a.t_end,
        record_every: a.record_every,
    };
    let n = problem.dim();
    let zeros = DVector::zeros(n);
    let lambda0 = DVector::zeros(problem.num_rows());
    let history = keep_partial(
        run_flow(
            &problem, &params, &cfg, &reference, &zeros, &zeros, &lambda0,
        ),
        a.out.as_deref(),
    )?;
    save_history(&history, a.out.as_deref())?;
    let last = history.last();
    print_json(&json!({
        "algorithm": "flow",
        "rows": history.len(),
        "t_end": last.map(|r| r.step),
        "objective_gap": last.and_then(|r| r.objective_gap),
        "primal_residual": last.map(|r| r.primal_residual),
        "lyapunov_H": last.and_then(|r| r.lyapunov_h),
    }))
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let kappa = match (a.kappa, &a.instance) {
        (Some(k), _) => k,
        (None, Some(path)) => stacked_kappa(&load_problem(path)?)?,
        (None, None) => {
            return Err(ApdError::InvalidParameter(
                "pass --kappa or --instance".into(),
            ))
        }
    };
    let mut params = RateParams::new(a.alpha, a.rho, a.gamma, kappa)?;
    if let Some(theta) = a.theta {
        params = params.with_theta(theta)?;
    }
    if let (Some(r), Some(k)) = (a.growth_r, a.growth_k) {
        params = params.with_growth(r, k)?;
    }
    let mut report = classify_regime(&params).to_json();
    report["kappa"] = json!(kappa);
    print_json(&report)
}

fn window_for(history: &RunHistory, start: f64, end: Option<f64>) -> Result<(f64, f64)> {
    let end = match end {
        Some(e) => e,
        None => history
            .last()
            .map(|r| r.step)
            .ok_or_else(|| ApdError::Fit("history is empty".into()))?,
    };
    Ok((start, end))
}

fn fit(a: FitArgs) -> Result<()> {
    let history = RunHistory::load_csv(&a.history)?;
    let fit = fit_rate(&history, window_for(&history, a.start, a.end)?)?;
    print_json(&serde_json::to_value(fit)?)
}

fn compare(a: CompareArgs) -> Result<()> {
    let mut out = csv::Writer::from_writer(std::io::stdout());
    out.write_record([
        "history",
        "rows",
        "last_step",
        "objective_gap",
        "primal_residual",
        "fitted_slope",
        "r_squared",
    ])?;
    for path in &a.histories {
        let history = RunHistory::load_csv(path)?;
        let last = history.last();
        let fit = window_for(&history, a.start, a.end)
            .and_then(|w| fit_rate(&history, w))
            .ok();
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        out.write_record([
            path.display().to_string(),
            history.len().to_string(),
            opt(last.map(|r| r.step)),
            opt(last.and_then(|r| r.objective_gap)),
            opt(last.map(|r| r.primal_residual)),
            opt(fit.map(|f| f.slope)),
            opt(fit.map(|f| f.r_squared)),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let report = run_experiment(&cfg, &a.out)?;
    print_json(&json!({
        "instance_id": report.instance_id,
        "cells": report.cells.len(),
        "diverged_cells": report.diverged_cells,
        "report": a.out.join("report.json"),
    }))
}

fn exit_code(e: &ApdError) -> u8 {
    if e.is_divergence() {
        3
    } else if e.is_validation() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Solve(a) => solve(a),
        Command::Flow(a) => flow(a),
        Command::Analyze(a) => analyze(a),
        Command::Fit(a) => fit(a),
        Command::Compare(a) => compare(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
