//! Patch-level prediction records and the line-delimited log file format.
//!
//! A log file is UTF-8 with one JSON object per line. The first line may be a
//! `{"meta": {...}}` object carrying run metadata; every other line is a
//! self-contained [`PatchPrediction`].

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classes::ClassLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Surgical,
    Biopsy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchPrediction {
    pub slide_id: String,
    pub patient_id: String,
    pub grid_row: usize,
    pub grid_col: usize,
    /// Absent when the slide is analyzed blind (service mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_label: Option<ClassLabel>,
    pub predicted_label: ClassLabel,
    pub probabilities: Vec<f64>,
    #[serde(default)]
    pub pad_fraction: f64,
}

impl PatchPrediction {
    /// Builds a record whose label is the argmax of `probabilities`.
    pub fn from_probabilities(
        slide_id: impl Into<String>,
        patient_id: impl Into<String>,
        grid_row: usize,
        grid_col: usize,
        true_label: Option<ClassLabel>,
        probabilities: Vec<f64>,
        pad_fraction: f64,
    ) -> Result<Self, LogError> {
        let idx = ClassLabel::argmax(&probabilities).ok_or(LogError::EmptyProbabilities)?;
        let predicted_label =
            ClassLabel::from_index(idx).ok_or(LogError::VectorLength(probabilities.len()))?;
        Ok(Self {
            slide_id: slide_id.into(),
            patient_id: patient_id.into(),
            grid_row,
            grid_col,
            true_label,
            predicted_label,
            probabilities,
            pad_fraction,
        })
    }

    /// Checks that the probability vector sums to one within `tol` and that
    /// the predicted label is its argmax.
    pub fn validate(&self, tol: f64) -> Result<(), LogError> {
        if self.probabilities.len() != crate::NUM_CLASSES {
            return Err(LogError::VectorLength(self.probabilities.len()));
        }
        let sum: f64 = self.probabilities.iter().sum();
        if !sum.is_finite() || (sum - 1.0).abs() > tol {
            return Err(LogError::NotNormalized(sum));
        }
        if ClassLabel::argmax(&self.probabilities) != Some(self.predicted_label.index()) {
            return Err(LogError::LabelMismatch {
                slide_id: self.slide_id.clone(),
                row: self.grid_row,
                col: self.grid_col,
            });
        }
        Ok(())
    }

    pub fn confidence(&self) -> f64 {
        self.probabilities
            .get(self.predicted_label.index())
            .copied()
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogMeta {
    pub checkpoint_id: String,
    pub split: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seconds_per_patch: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionLog {
    pub meta: LogMeta,
    pub records: Vec<PatchPrediction>,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("probability vector is empty")]
    EmptyProbabilities,
    #[error("probability vector has length {0}, expected {n}", n = crate::NUM_CLASSES)]
    VectorLength(usize),
    #[error("probabilities sum to {0}, not 1")]
    NotNormalized(f64),
    #[error("predicted label of {slide_id} ({row},{col}) is not the argmax of its vector")]
    LabelMismatch { slide_id: String, row: usize, col: usize },
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    meta: LogMeta,
}

impl PredictionLog {
    pub fn new(meta: LogMeta) -> Self {
        Self { meta, records: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), LogError> {
        let meta = serde_json::to_string(&MetaLine { meta: self.meta.clone() })
            .map_err(|e| LogError::Parse { line: 1, source: e })?;
        writeln!(w, "{meta}")?;
        for (i, r) in self.records.iter().enumerate() {
            let line = serde_json::to_string(r).map_err(|e| LogError::Parse { line: i + 2, source: e })?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_from<R: io::Read>(r: R) -> Result<Self, LogError> {
        let mut log = PredictionLog::default();
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if i == 0 && trimmed.starts_with("{\"meta\"") {
                let m: MetaLine = serde_json::from_str(trimmed)
                    .map_err(|e| LogError::Parse { line: i + 1, source: e })?;
                log.meta = m.meta;
                continue;
            }
            let rec: PatchPrediction = serde_json::from_str(trimmed)
                .map_err(|e| LogError::Parse { line: i + 1, source: e })?;
            log.records.push(rec);
        }
        Ok(log)
    }

    /// Writes to a sibling temp file then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<(), LogError> {
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut f = io::BufWriter::new(fs::File::create(&tmp)?);
            self.write_to(&mut f)?;
            f.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, LogError> {
        Self::read_from(fs::File::open(path)?)
    }
}
