use std::fmt::Write as _;

use histocad_core::Scalar;
use histocad_mavit::{checkpoint_id, Ablation, Mavit, ModelConfig};
use histocad_metriq::{macro_metrics, ConfusionMatrix, Level};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::dataset::Splits;
use crate::error::TrainError;
use crate::evaluate::{evaluate, log_accuracy};
use crate::trainer::train;

pub const VARIANTS: [Ablation; 3] = [Ablation::BASELINE, Ablation::WITH_VTM, Ablation::FULL];
pub const METRIC_COLUMNS: [&str; 4] = ["Accuracy", "Sensitivity", "Specificity", "F1"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantScores {
    /// Macro one-vs-rest values on the test split.
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    /// Plain fraction correct on the test split.
    pub overall_accuracy: f64,
    pub train_accuracy: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

impl VariantScores {
    pub fn columns(&self) -> [f64; 4] {
        [self.accuracy, self.sensitivity, self.specificity, self.f1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub ablation: Ablation,
    pub parameter_count: Option<usize>,
    pub scores: Option<VariantScores>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Metric cells as percentages; a failed variant has no cells.
    pub fn cells(&self) -> Vec<Option<[f64; 4]>> {
        self.rows.iter().map(|r| r.scores.as_ref().map(|s| s.columns().map(|v| 100.0 * v))).collect()
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("| Model | {} |\n|---|---|---|---|---|\n", METRIC_COLUMNS.join(" | "));
        for r in &self.rows {
            match &r.scores {
                Some(s) => {
                    let cells: Vec<String> = s.columns().iter().map(|v| format!("{:.2}", 100.0 * v)).collect();
                    let _ = writeln!(out, "| {} | {} |", r.variant, cells.join(" | "));
                }
                None => {
                    let _ = writeln!(out, "| {} | failed: {} |||", r.variant, r.error.as_deref().unwrap_or("?"));
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("variant,parameters,{}\n", METRIC_COLUMNS.map(str::to_lowercase).join(","));
        for r in &self.rows {
            let cells = match &r.scores {
                Some(s) => s.columns().map(|v| v.to_string()).join(","),
                None => ",,,".to_string(),
            };
            let params = r.parameter_count.map(|n| n.to_string()).unwrap_or_default();
            let _ = writeln!(out, "\"{}\",{},{}", r.variant, params, cells);
        }
        out
    }
}

fn run_variant<T: Scalar>(cfg: ModelConfig, train_cfg: &TrainConfig, data: &Splits) -> Result<VariantScores, TrainError> {
    let model = Mavit::<T>::new(cfg, train_cfg.seed)?;
    let outcome = train(model, train_cfg, data)?;
    let id = checkpoint_id(&outcome.model.to_checkpoint_bytes()?);
    let test = evaluate(&outcome.model, &data.test, "test", &id)?;
    let train_log = evaluate(&outcome.model, &data.train, "train", &id)?;
    let m = macro_metrics(&ConfusionMatrix::from_log(&test)?, Level::Tile)?;
    Ok(VariantScores {
        accuracy: m.accuracy,
        sensitivity: m.sensitivity,
        specificity: m.specificity,
        f1: m.f1,
        overall_accuracy: log_accuracy(&test),
        train_accuracy: log_accuracy(&train_log),
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.curve.len(),
    })
}

/// Trains and tests the baseline, +VTM and full variants of `base`. A failing
/// variant is reported in its row and does not stop the others.
pub fn run_ablation<T: Scalar>(base: &ModelConfig, train_cfg: &TrainConfig, data: &Splits) -> Result<AblationTable, TrainError> {
    if data.test.is_empty() {
        return Err(TrainError::EmptySplit("test"));
    }
    let mut rows = Vec::with_capacity(VARIANTS.len());
    for ablation in VARIANTS {
        let cfg = base.clone().with_ablation(ablation);
        let parameter_count = Mavit::<T>::new(cfg.clone(), 0).ok().map(|m| m.parameter_count());
        let result = run_variant::<T>(cfg, train_cfg, data);
        if let Err(e) = &result {
            log::warn!("{} failed: {e}", ablation.variant_name());
        }
        rows.push(AblationRow {
            variant: ablation.variant_name().to_string(),
            ablation,
            parameter_count,
            error: result.as_ref().err().map(|e| e.to_string()),
            scores: result.ok(),
        });
    }
    Ok(AblationTable { rows })
}
