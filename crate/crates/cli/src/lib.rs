//! End-to-end analysis pipeline and report serialization.
//!
//! [`analyze_log`] wires the library stages together: per-user sequences,
//! entropy rates, population coupling ratios, bound solving and optional
//! calibration correction, aggregated into a [`PredictabilityReport`].

pub mod output;
pub mod pipeline;

pub use pipeline::{
    analyze_log, analyze_source, AnalyzeConfig, AnalyzeError, PredictabilityReport, UserRow,
};
