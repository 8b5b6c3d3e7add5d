//! Instance generators, run histories, rate fitting and experiment orchestration.

mod config;
mod experiment;
mod fit;
mod history;
mod instances;

pub use config::{
    ApdConfig, ExperimentConfig, FlowConfig, GridConfig, InstanceConfig, LpmmConfig, ALGORITHMS,
};
pub use experiment::{
    build_instance, gap_envelope_monotone, run_experiment, CellReport, ExperimentReport,
    ENVELOPE_BURN_IN,
};
pub use fit::{fit_rate, least_squares_line, RateFit, MIN_FIT_ROWS};
pub use history::{HistoryMeta, HistoryRow, RunHistory, CSV_HEADER};
pub use instances::{generate_lad, generate_quadratic_toy, quadratic_toy, LadSpec};
