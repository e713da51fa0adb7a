//! Evaluation metrics over prediction logs.
//!
//! Tile-level metrics treat each patch record as a unit; patient-level
//! metrics first reduce each patient's records to a majority-vote diagnosis.
//! Macro averages are unweighted means of one-vs-rest per-class values.

pub mod bootstrap;
pub mod calibration;
pub mod confusion;
pub mod error;
pub mod metrics;
pub mod report;

pub use bootstrap::{bootstrap_ci, quantile, BootstrapConfig, ConfidenceInterval};
pub use calibration::{
    bin_index, brier_one, brier_score, calibration_bins, calibration_curve, confidence_points, CalibrationBin,
    DEFAULT_BINS,
};
pub use confusion::ConfusionMatrix;
pub use error::MetricError;
pub use metrics::{class_metrics, macro_metrics, ClassMetrics, Level, MetricReport};
pub use report::{
    build_report, patient_confusion, patient_outcomes, write_report, CalibrationReport, PatientOutcome, Report,
};
