//! Online recalibration of multi-level quantile forecasts.
//!
//! A base forecaster supplies quantiles `b_t` at fixed levels. Each tracker
//! keeps per-level offsets, updates them from coverage feedback, and can
//! project the result so issued quantiles never cross.

pub mod adversarial;
pub mod cli;
pub mod error;
pub mod isotonic;
pub mod losses;
pub mod metrics;
pub mod runner_io;
pub mod trackers;

pub use error::{Error, Result};
pub use isotonic::{pava, project_eps_separated, project_shifted, OrderedVector};
pub use losses::{aggregated_quantile_loss, quantile_loss, QuantileLevels};
pub use trackers::{run_series, SeriesPoint, StepRecord, Tracker, VariantKind, VariantSpec};
