use histocad_core::PredictionLog;
use serde::{Deserialize, Serialize};

use crate::error::MetricError;

pub const DEFAULT_BINS: usize = 10;
/// Probability vectors must sum to one within this tolerance.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// Mean over records of `sum_c (p_c - [c == truth])^2`; lies in `[0, 2]`.
pub fn brier_score(log: &PredictionLog) -> Result<f64, MetricError> {
    if log.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut total = 0.0;
    for r in &log.records {
        let truth = r.true_label.ok_or_else(|| MetricError::MissingTruth { slide_id: r.slide_id.clone() })?;
        total += brier_one(&r.probabilities, truth.index())?;
    }
    Ok(total / log.len() as f64)
}

pub fn brier_one(probabilities: &[f64], truth: usize) -> Result<f64, MetricError> {
    let sum: f64 = probabilities.iter().sum();
    if !sum.is_finite() || (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(MetricError::Validation(format!("probabilities sum to {sum}")));
    }
    if truth >= probabilities.len() {
        return Err(MetricError::Label { index: truth, k: probabilities.len() });
    }
    Ok(probabilities
        .iter()
        .enumerate()
        .map(|(c, &p)| {
            let y = if c == truth { 1.0 } else { 0.0 };
            (p - y) * (p - y)
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// `None` for an empty bin.
    pub mean_confidence: Option<f64>,
    pub accuracy: Option<f64>,
}

pub fn bin_index(confidence: f64, bins: usize) -> usize {
    ((confidence.clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1)
}

/// Equal-width reliability bins over `[0, 1]` from `(confidence, correct)`
/// pairs; the last bin is closed on the right.
pub fn calibration_bins(points: &[(f64, bool)], bins: usize) -> Vec<CalibrationBin> {
    let bins = bins.max(1);
    let mut sums = vec![(0usize, 0.0f64, 0usize); bins];
    for &(conf, correct) in points {
        let b = &mut sums[bin_index(conf, bins)];
        b.0 += 1;
        b.1 += conf;
        b.2 += correct as usize;
    }
    sums.into_iter()
        .enumerate()
        .map(|(i, (count, conf, hits))| CalibrationBin {
            lower: i as f64 / bins as f64,
            upper: (i + 1) as f64 / bins as f64,
            count,
            mean_confidence: (count > 0).then(|| conf / count as f64),
            accuracy: (count > 0).then(|| hits as f64 / count as f64),
        })
        .collect()
}

/// Top-label confidence and correctness for each record.
pub fn confidence_points(log: &PredictionLog) -> Result<Vec<(f64, bool)>, MetricError> {
    log.records
        .iter()
        .map(|r| {
            let truth = r.true_label.ok_or_else(|| MetricError::MissingTruth { slide_id: r.slide_id.clone() })?;
            Ok((r.confidence(), truth == r.predicted_label))
        })
        .collect()
}

pub fn calibration_curve(log: &PredictionLog, bins: usize) -> Result<Vec<CalibrationBin>, MetricError> {
    Ok(calibration_bins(&confidence_points(log)?, bins))
}
