//! Error metrics against the oracle, stationary sampling, rate fitting and
//! experiment sweeps.

mod config;
mod fit;
mod metrics;
mod run;

pub use config::{Algorithm, ExperimentConfig, OracleConfig, OutputConfig, Overrides, QueryConfig};
pub use fit::{median, rate_fit, rate_fit_seeds, RateFit};
pub use metrics::{
    burn_in_diagnostic, query_grid, stationary_samples, sup_error, weighted_l1_error, BurnInDiagnostic, Metric,
};
pub use run::{
    cached_oracle, experiment_trajectory, run_experiment, FitSummary, MetricKind, OracleInfo, RateReport, Record,
    RunMetadata, RECORD_HEADER,
};
