use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ApdError, Result};

pub const CSV_HEADER: [&str; 6] = [
    "step",
    "objective_gap",
    "primal_residual",
    "lyapunov_E",
    "lyapunov_H",
    "sigma",
];

/// One record. `step` is the iteration index for discrete solvers and the
/// time `t` for the flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: f64,
    pub objective_gap: Option<f64>,
    pub primal_residual: f64,
    #[serde(rename = "lyapunov_E")]
    pub lyapunov_e: Option<f64>,
    #[serde(rename = "lyapunov_H")]
    pub lyapunov_h: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HistoryMeta {
    pub algorithm: String,
    pub instance_id: String,
    pub seed: u64,
    pub params: BTreeMap<String, f64>,
    /// Free-form status lines (inner-solver warnings, halting reason).
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunHistory {
    pub meta: HistoryMeta,
    pub rows: Vec<HistoryRow>,
}

impl RunHistory {
    pub fn new(algorithm: &str, instance_id: &str, seed: u64) -> Self {
        RunHistory {
            meta: HistoryMeta {
                algorithm: algorithm.to_string(),
                instance_id: instance_id.to_string(),
                seed,
                ..Default::default()
            },
            rows: Vec::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.meta.params.insert(key.to_string(), value);
        self
    }

    pub fn push(&mut self, row: HistoryRow) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&HistoryRow> {
        self.rows.last()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.step.to_string(),
                opt(r.objective_gap),
                r.primal_residual.to_string(),
                opt(r.lyapunov_e),
                opt(r.lyapunov_h),
                opt(r.sigma),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| ApdError::Config(e.to_string()))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Rows only; the metadata is not part of the CSV.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != CSV_HEADER {
            return Err(ApdError::Config(format!(
                "unexpected history header {header:?}, expected {CSV_HEADER:?}"
            )));
        }
        let mut h = RunHistory::default();
        for rec in r.deserialize() {
            h.rows.push(rec?);
        }
        Ok(h)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn meta_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.meta)?)
    }
}
