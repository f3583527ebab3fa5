//! Statistical checks of simulated observables against their limit laws.

mod mminf;
mod reports;
mod stats;

use thiserror::Error;

pub use mminf::{mm_infinity_laplace, mm_infinity_monte_carlo, mm_infinity_simulate, LaplaceEstimate, MMInfParams};
pub use reports::{
    balance_decay, lag_scaling_report, sigmoid_sharpness, BalanceDecayReport, LagRow, LagScalingReport,
    ReplicationSummary, Sharpness,
};
pub use stats::{
    cv, ks_critical_one_sample, ks_critical_two_sample, ks_exponential, ks_two_sample, median, poisson_stream_test,
    quantile, KsResult, PoissonStreamReport,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("insufficient data: {what} needs at least {needed}, got {got}")]
    InsufficientData { what: &'static str, needed: usize, got: usize },
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),
    #[error("loss of precision: {0}")]
    Precision(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("curve never reaches a polymerized fraction of {0}")]
    IncompleteCurve(f64),
}
