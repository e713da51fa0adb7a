use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use histocad_core::{ClassLabel, PatchPrediction, PredictionLog, NUM_CLASSES};
use histocad_verdict::{diagnose_patients, DiagnosisResult, VoteConfig};
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_ci, BootstrapConfig, ConfidenceInterval};
use crate::calibration::{brier_one, brier_score, calibration_curve, CalibrationBin, DEFAULT_BINS};
use crate::confusion::ConfusionMatrix;
use crate::error::MetricError;
use crate::metrics::{macro_metrics, Level, MetricReport};

/// A patient's registered truth and majority-vote diagnosis.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientOutcome {
    pub patient_id: String,
    pub truth: ClassLabel,
    pub diagnosis: DiagnosisResult,
}

impl PatientOutcome {
    pub fn correct(&self) -> bool {
        self.truth == self.diagnosis.final_label
    }
}

/// Groups the log by patient and votes; all records of a patient must share
/// one true label.
pub fn patient_outcomes(log: &PredictionLog, vote: &VoteConfig) -> Result<Vec<PatientOutcome>, MetricError> {
    let mut truth: BTreeMap<&str, ClassLabel> = BTreeMap::new();
    for r in &log.records {
        let t = r.true_label.ok_or_else(|| MetricError::MissingTruth { slide_id: r.slide_id.clone() })?;
        if *truth.entry(&r.patient_id).or_insert(t) != t {
            return Err(MetricError::InconsistentTruth(r.patient_id.clone()));
        }
    }
    Ok(diagnose_patients(log, vote)
        .into_iter()
        .map(|(patient_id, diagnosis)| {
            let truth = truth[patient_id.as_str()];
            PatientOutcome { patient_id, truth, diagnosis }
        })
        .collect())
}

pub fn patient_confusion(outcomes: &[PatientOutcome]) -> ConfusionMatrix {
    let pairs: Vec<_> = outcomes.iter().map(|o| (o.truth, o.diagnosis.final_label)).collect();
    ConfusionMatrix::from_labels(&pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    pub brier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub level: Level,
    pub classes: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    pub metrics: MetricReport,
    /// Tile level only: patient votes carry no probability vector.
    pub calibration: Option<CalibrationReport>,
    pub intervals: BTreeMap<String, ConfidenceInterval>,
}

fn macro_of(cm: &ConfusionMatrix, level: Level) -> Option<MetricReport> {
    macro_metrics(cm, level).ok()
}

fn metric_intervals<U: Sync>(
    units: &[U],
    pair: impl Fn(&U) -> (usize, usize) + Sync,
    level: Level,
    boot: &BootstrapConfig,
) -> Result<BTreeMap<String, ConfidenceInterval>, MetricError> {
    let pick: [(&str, fn(&MetricReport) -> f64); 4] = [
        ("accuracy", |m| m.accuracy),
        ("sensitivity", |m| m.sensitivity),
        ("specificity", |m| m.specificity),
        ("f1", |m| m.f1),
    ];
    let mut out = BTreeMap::new();
    for (name, f) in pick {
        let ci = bootstrap_ci(
            units,
            |sample| {
                let cm = ConfusionMatrix::from_pairs(NUM_CLASSES, sample.iter().map(|u| pair(u))).expect("canonical");
                macro_of(&cm, level).map(|m| f(&m)).unwrap_or(f64::NAN)
            },
            boot,
        )?;
        out.insert(name.to_string(), ci);
    }
    Ok(out)
}

pub fn build_report(log: &PredictionLog, level: Level, boot: &BootstrapConfig) -> Result<Report, MetricError> {
    if log.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let classes = ClassLabel::names();
    match level {
        Level::Tile => {
            let cm = ConfusionMatrix::from_log(log)?;
            let metrics = macro_metrics(&cm, level)?;
            let brier = brier_score(log)?;
            let mut intervals = metric_intervals(
                &log.records,
                |r: &PatchPrediction| (r.true_label.expect("checked").index(), r.predicted_label.index()),
                level,
                boot,
            )?;
            let brier_ci = bootstrap_ci(
                &log.records,
                |s| {
                    s.iter().map(|r| brier_one(&r.probabilities, r.true_label.expect("checked").index()).unwrap_or(f64::NAN)).sum::<f64>()
                        / s.len() as f64
                },
                &BootstrapConfig { unit_interval: false, ..*boot },
            )?;
            intervals.insert("brier".into(), brier_ci);
            Ok(Report {
                level,
                classes,
                confusion: cm.rows(),
                metrics,
                calibration: Some(CalibrationReport { bins: calibration_curve(log, DEFAULT_BINS)?, brier }),
                intervals,
            })
        }
        Level::Patient => {
            let outcomes = patient_outcomes(log, &VoteConfig::default())?;
            let cm = patient_confusion(&outcomes);
            let metrics = macro_metrics(&cm, level)?;
            let intervals = metric_intervals(
                &outcomes,
                |o: &PatientOutcome| (o.truth.index(), o.diagnosis.final_label.index()),
                level,
                boot,
            )?;
            Ok(Report { level, classes, confusion: cm.rows(), metrics, calibration: None, intervals })
        }
    }
}

/// Writes `report.json` and `per_class.csv` into `dir`; returns both paths.
pub fn write_report(report: &Report, dir: &Path) -> Result<(PathBuf, PathBuf), MetricError> {
    fs::create_dir_all(dir)?;
    let json_path = dir.join("report.json");
    fs::write(&json_path, serde_json::to_string_pretty(report)?)?;
    let csv_path = dir.join("per_class.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["class", "support", "tp", "fp", "fn", "tn", "accuracy", "sensitivity", "specificity", "f1"])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for m in &report.metrics.per_class {
        w.write_record([
            report.classes[m.class_index].clone(),
            m.support().to_string(),
            m.tp.to_string(),
            m.fp.to_string(),
            m.fn_.to_string(),
            m.tn.to_string(),
            format!("{:.6}", m.accuracy),
            opt(m.sensitivity),
            opt(m.specificity),
            opt(m.f1),
        ])?;
    }
    w.flush()?;
    Ok((json_path, csv_path))
}
