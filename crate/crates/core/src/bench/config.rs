//! Strict TOML experiment configuration. Unknown keys are rejected.
//!
//! ```toml
//! [instance]
//! kind = "lad"            # or "quadratic" (uses n and seed only)
//! m = 60
//! n = 30
//! s = 6
//! density = 0.3
//! noise_level = 0.01
//! delta = 0.1
//! seed = 7
//!
//! [apd]
//! max_iter = 5000
//! tol_primal = 1e-4
//!
//! [lpmm]
//! reference_iter = 200000
//!
//! [flow]
//! t_end = 100.0
//!
//! [grid]
//! algorithms = ["apd", "lpmm"]
//! alpha = [0.1, 3.0]
//! rho = [2.0, 3.0]
//! gamma = 1.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LadSpec;
use crate::apd::{ApdParams, PenaltyPolicy};
use crate::error::{ApdError, Result};
use crate::flow::SmoothingConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceConfig,
    #[serde(default)]
    pub apd: ApdConfig,
    #[serde(default)]
    pub lpmm: LpmmConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub grid: GridConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstanceConfig {
    pub kind: String,
    pub m: usize,
    pub n: usize,
    pub s: usize,
    pub density: f64,
    pub noise_level: f64,
    pub delta: f64,
    pub seed: u64,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        InstanceConfig {
            kind: "lad".into(),
            m: 60,
            n: 30,
            s: 6,
            density: 0.3,
            noise_level: 0.01,
            delta: 0.1,
            seed: 0,
        }
    }
}

impl InstanceConfig {
    pub fn lad_spec(&self) -> LadSpec {
        LadSpec {
            m: self.m,
            n: self.n,
            s: self.s,
            density: self.density,
            noise_level: self.noise_level,
            delta: self.delta,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApdConfig {
    /// Single-run values; the grid overrides them per cell.
    pub alpha: f64,
    pub rho: f64,
    /// Defaults to `1 / kappa` of the stacked constraint matrix.
    pub h: Option<f64>,
    /// Defaults to `1 / rho`.
    pub sigma0: Option<f64>,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_gap: f64,
    pub inner_tol: f64,
    pub inner_max: usize,
    pub penalty: bool,
    pub tau_incr: f64,
    pub mu: f64,
    pub seed: u64,
    pub divergence_threshold: f64,
}

impl Default for ApdConfig {
    fn default() -> Self {
        ApdConfig {
            alpha: 3.0,
            rho: 3.0,
            h: None,
            sigma0: None,
            max_iter: 5000,
            tol_primal: 1e-6,
            tol_gap: 1e-6,
            inner_tol: 1e-8,
            inner_max: 500,
            penalty: true,
            tau_incr: 2.0,
            mu: 10.0,
            seed: 0,
            divergence_threshold: 1e12,
        }
    }
}

impl ApdConfig {
    /// Parameters for one `(alpha, rho)` cell given `kappa([A B])`.
    pub fn params(&self, alpha: f64, rho: f64, kappa: f64) -> Result<ApdParams> {
        let h = match self.h {
            Some(h) => h,
            None if kappa > 0.0 => 1.0 / kappa,
            None => return Err(ApdError::InvalidProblem("constraint matrix is zero".into())),
        };
        let p = ApdParams {
            alpha,
            rho,
            h,
            sigma0: self.sigma0.unwrap_or(1.0 / rho),
            max_iter: self.max_iter,
            tol_primal: self.tol_primal,
            tol_gap: self.tol_gap,
            inner_tol: self.inner_tol,
            inner_max: self.inner_max,
            penalty_policy: PenaltyPolicy {
                tau_incr: self.tau_incr,
                mu: self.mu,
                enabled: self.penalty,
            },
            seed: self.seed,
            divergence_threshold: self.divergence_threshold,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LpmmConfig {
    pub c: f64,
    /// Default `1.01 c |A|^2`.
    pub alpha_x: Option<f64>,
    /// Default `1.01 c |B|^2`.
    pub alpha_y: Option<f64>,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_gap: f64,
    /// Length of the reference run used for `F*`.
    pub reference_iter: usize,
    pub record_every: usize,
}

impl Default for LpmmConfig {
    fn default() -> Self {
        LpmmConfig {
            c: 1.0,
            alpha_x: None,
            alpha_y: None,
            max_iter: 20_000,
            tol_primal: 1e-10,
            tol_gap: 1e-10,
            reference_iter: 200_000,
            record_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub mu: f64,
    pub step: f64,
    pub t0: f64,
    pub t_end: f64,
    pub record_every: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        let d = SmoothingConfig::default();
        FlowConfig {
            mu: d.mu,
            step: d.integrator_step,
            t0: d.t0,
            t_end: d.t_end,
            record_every: 10,
        }
    }
}

impl FlowConfig {
    pub fn smoothing(&self) -> SmoothingConfig {
        SmoothingConfig {
            mu: self.mu,
            integrator_step: self.step,
            t0: self.t0,
            t_end: self.t_end,
            record_every: self.record_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Any of "apd", "lpmm", "flow". LPMM has no `(alpha, rho)` and runs once.
    pub algorithms: Vec<String>,
    pub alpha: Vec<f64>,
    pub rho: Vec<f64>,
    /// Flatness exponent used for regime classification in the report.
    pub gamma: f64,
    /// `[start, end]` for the log-log rate fit; defaults to `[10, max_iter]`.
    pub fit_window: Option<[f64; 2]>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            algorithms: vec!["apd".into()],
            alpha: Vec::new(),
            rho: Vec::new(),
            gamma: 1.0,
            fit_window: None,
        }
    }
}

pub const ALGORITHMS: [&str; 3] = ["apd", "lpmm", "flow"];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ApdError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        match self.instance.kind.as_str() {
            "lad" => self.instance.lad_spec().validate()?,
            "quadratic" => {
                if self.instance.n == 0 {
                    return Err(ApdError::Config("instance.n must be positive".into()));
                }
            }
            other => {
                return Err(ApdError::Config(format!(
                    "instance.kind must be \"lad\" or \"quadratic\", got {other:?}"
                )))
            }
        }
        for a in &self.grid.algorithms {
            if !ALGORITHMS.contains(&a.as_str()) {
                return Err(ApdError::Config(format!(
                    "unknown algorithm {a:?} in grid.algorithms"
                )));
            }
        }
        if self
            .grid
            .alpha
            .iter()
            .chain(&self.grid.rho)
            .any(|v| !(*v > 0.0))
        {
            return Err(ApdError::Config(
                "grid alpha and rho values must be positive".into(),
            ));
        }
        if !(self.grid.gamma >= 1.0) {
            return Err(ApdError::Config("grid.gamma must be at least 1".into()));
        }
        if let Some([a, b]) = self.grid.fit_window {
            if !(a > 0.0 && b >= a) {
                return Err(ApdError::Config(format!("bad fit_window [{a}, {b}]")));
            }
        }
        self.flow.smoothing().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_and_full() {
        let cfg = ExperimentConfig::from_toml("[instance]\nseed = 3\n").unwrap();
        assert_eq!(cfg.instance.m, 60);
        assert!(cfg.grid.alpha.is_empty());
        let text = r#"
            [instance]
            kind = "lad"
            m = 20
            n = 10
            s = 2
            [apd]
            max_iter = 10
            penalty = false
            [grid]
            algorithms = ["apd", "lpmm"]
            alpha = [0.1, 3.0]
            rho = [2.0]
            fit_window = [5.0, 100.0]
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.grid.alpha, vec![0.1, 3.0]);
        assert!(!cfg.apd.penalty);
    }

    #[test]
    fn unknown_keys_are_fatal() {
        for text in [
            "[instance]\nsed = 3\n",
            "[instance]\n[apd]\nalpah = 1.0\n",
            "[instance]\n[extra]\n",
            "[instance]\n[grid]\nalgorithms = [\"admm\"]\n",
            "[instance]\nkind = \"rpca\"\n",
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml(text), Err(ApdError::Config(_))),
                "{text}"
            );
        }
    }
}
