use std::time::{Instant, SystemTime, UNIX_EPOCH};

use histocad_core::{LogMeta, PatchPrediction, PredictionLog, Scalar};
use histocad_mavit::Mavit;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::TrainError;
use crate::trainer::to_tensor;

/// Predicts every sample of `data` in order. Inference fans out across
/// threads; records are appended in dataset order.
pub fn evaluate<T: Scalar>(
    model: &Mavit<T>,
    data: &Dataset,
    split: &str,
    checkpoint_id: &str,
) -> Result<PredictionLog, TrainError> {
    if model.classes() != data.classes {
        return Err(TrainError::Compatibility(format!(
            "checkpoint has {:?}, dataset has {:?}",
            model.classes(),
            data.classes
        )));
    }
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let started = Instant::now();
    let records: Vec<PatchPrediction> = data
        .samples
        .par_iter()
        .map(|s| -> Result<PatchPrediction, TrainError> {
            let probs = model.forward(&to_tensor(&s.patch)?)?;
            let probs: Vec<f64> = probs.iter().map(|v| v.as_f64()).collect();
            Ok(PatchPrediction::from_probabilities(
                s.slide_id.clone(),
                s.patient_id.clone(),
                s.grid_row,
                s.grid_col,
                Some(s.label),
                probs,
                0.0,
            )?)
        })
        .collect::<Result<_, _>>()?;
    let elapsed = started.elapsed().as_secs_f64();
    let meta = LogMeta {
        checkpoint_id: checkpoint_id.to_string(),
        split: split.to_string(),
        timestamp,
        seconds_per_patch: (!records.is_empty()).then(|| elapsed / records.len() as f64),
    };
    Ok(PredictionLog { meta, records })
}

/// Fraction of records whose prediction matches the truth.
pub fn log_accuracy(log: &PredictionLog) -> f64 {
    if log.records.is_empty() {
        return 0.0;
    }
    let hits = log.records.iter().filter(|r| r.true_label == Some(r.predicted_label)).count();
    hits as f64 / log.records.len() as f64
}
