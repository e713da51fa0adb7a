//! Hard majority voting over patch labels.
//!
//! For a set of `n` patch labels the proportion of class `y` is
//! `p_y = count(y) / n`; the diagnosis is the class with the largest
//! proportion, ties resolved by canonical class order and flagged.

use std::collections::BTreeMap;
use std::ops::Range;

use histocad_core::{ClassLabel, PatchPrediction, PredictionLog, NUM_CLASSES};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum VerdictError {
    #[error("no patch evidence for {0}")]
    EmptyEvidence(String),
    #[error("invalid diagnosis table: {0}")]
    InvalidTable(String),
}

/// Which records take part in a vote.
#[derive(Debug, Clone, PartialEq)]
pub enum Scope {
    Slide(String),
    Patient(String),
    /// Cells of one slide's grid with `row` and `col` inside the ranges.
    Roi { slide_id: String, rows: Range<usize>, cols: Range<usize> },
    All,
}

impl Scope {
    pub fn contains(&self, r: &PatchPrediction) -> bool {
        match self {
            Scope::Slide(id) => &r.slide_id == id,
            Scope::Patient(id) => &r.patient_id == id,
            Scope::Roi { slide_id, rows, cols } => {
                &r.slide_id == slide_id && rows.contains(&r.grid_row) && cols.contains(&r.grid_col)
            }
            Scope::All => true,
        }
    }

    fn describe(&self) -> String {
        match self {
            Scope::Slide(id) => format!("slide `{id}`"),
            Scope::Patient(id) => format!("patient `{id}`"),
            Scope::Roi { slide_id, rows, cols } => format!("region rows {rows:?} cols {cols:?} of slide `{slide_id}`"),
            Scope::All => "the log".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoteConfig {
    /// Records padded beyond this fraction do not vote; `None` keeps all.
    pub max_pad_fraction: Option<f64>,
}

impl Default for VoteConfig {
    fn default() -> Self {
        Self { max_pad_fraction: Some(0.5) }
    }
}

impl VoteConfig {
    pub fn admits(&self, r: &PatchPrediction) -> bool {
        self.max_pad_fraction.is_none_or(|m| r.pad_fraction <= m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosisResult {
    /// Vote counts in canonical class order.
    pub counts: [usize; NUM_CLASSES],
    pub n: usize,
    pub final_label: ClassLabel,
    pub certainty: f64,
    /// Every class sharing the top count; more than one means a tie.
    pub tied_labels: Vec<ClassLabel>,
}

impl DiagnosisResult {
    pub fn from_counts(counts: [usize; NUM_CLASSES]) -> Result<Self, VerdictError> {
        let n: usize = counts.iter().sum();
        if n == 0 {
            return Err(VerdictError::EmptyEvidence("an empty label set".into()));
        }
        let best = ClassLabel::argmax(&counts).expect("non-empty counts");
        let tied_labels = ClassLabel::ALL.into_iter().filter(|c| counts[c.index()] == counts[best]).collect();
        Ok(Self {
            counts,
            n,
            final_label: ClassLabel::from_index(best).expect("index in range"),
            certainty: counts[best] as f64 / n as f64,
            tied_labels,
        })
    }

    pub fn proportion(&self, label: ClassLabel) -> f64 {
        self.counts[label.index()] as f64 / self.n as f64
    }

    pub fn proportions(&self) -> [f64; NUM_CLASSES] {
        let mut p = [0.0; NUM_CLASSES];
        for (v, &c) in p.iter_mut().zip(&self.counts) {
            *v = c as f64 / self.n as f64;
        }
        p
    }

    pub fn is_tie(&self) -> bool {
        self.tied_labels.len() > 1
    }

    /// Non-zero classes in descending order of proportion (canonical order
    /// among equals).
    pub fn table(&self) -> Vec<TableRow> {
        let mut rows: Vec<TableRow> = ClassLabel::ALL
            .into_iter()
            .filter(|c| self.counts[c.index()] > 0)
            .map(|c| TableRow { label: c, count: self.counts[c.index()], proportion: self.proportion(c) })
            .collect();
        rows.sort_by(|a, b| b.count.cmp(&a.count).then(a.label.cmp(&b.label)));
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: ClassLabel,
    pub count: usize,
    pub proportion: f64,
}

#[derive(Serialize, Deserialize)]
struct DiagnosisWire {
    final_label: ClassLabel,
    certainty: f64,
    n: usize,
    tie: bool,
    tied_labels: Vec<ClassLabel>,
    table: Vec<TableRow>,
}

impl Serialize for DiagnosisResult {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        DiagnosisWire {
            final_label: self.final_label,
            certainty: self.certainty,
            n: self.n,
            tie: self.is_tie(),
            tied_labels: self.tied_labels.clone(),
            table: self.table(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DiagnosisResult {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = DiagnosisWire::deserialize(d)?;
        let mut counts = [0usize; NUM_CLASSES];
        for row in &wire.table {
            counts[row.label.index()] = row.count;
        }
        let result = DiagnosisResult::from_counts(counts).map_err(serde::de::Error::custom)?;
        if result.n != wire.n || result.final_label != wire.final_label {
            return Err(serde::de::Error::custom(VerdictError::InvalidTable(
                "table counts disagree with the stated diagnosis".into(),
            )));
        }
        Ok(result)
    }
}

pub fn count_labels<'a>(labels: impl IntoIterator<Item = &'a ClassLabel>) -> [usize; NUM_CLASSES] {
    let mut counts = [0usize; NUM_CLASSES];
    for l in labels {
        counts[l.index()] += 1;
    }
    counts
}

/// `p_y` for every class, in canonical order.
pub fn class_proportions(labels: &[ClassLabel]) -> Result<[f64; NUM_CLASSES], VerdictError> {
    if labels.is_empty() {
        return Err(VerdictError::EmptyEvidence("an empty label set".into()));
    }
    Ok(DiagnosisResult::from_counts(count_labels(labels))?.proportions())
}

pub fn diagnose_labels(labels: &[ClassLabel]) -> Result<DiagnosisResult, VerdictError> {
    DiagnosisResult::from_counts(count_labels(labels))
}

pub fn diagnose_records<'a>(
    records: impl IntoIterator<Item = &'a PatchPrediction>,
    scope: &Scope,
    cfg: &VoteConfig,
) -> Result<DiagnosisResult, VerdictError> {
    let counts = count_labels(
        records
            .into_iter()
            .filter(|r| scope.contains(r) && cfg.admits(r))
            .map(|r| &r.predicted_label),
    );
    DiagnosisResult::from_counts(counts).map_err(|_| VerdictError::EmptyEvidence(scope.describe()))
}

pub fn diagnose(log: &PredictionLog, scope: &Scope, cfg: &VoteConfig) -> Result<DiagnosisResult, VerdictError> {
    diagnose_records(&log.records, scope, cfg)
}

/// One diagnosis per key (e.g. patient or slide id); keys whose records are
/// all excluded are omitted.
pub fn diagnose_grouped<K: Ord + Clone>(
    log: &PredictionLog,
    key: impl Fn(&PatchPrediction) -> K,
    cfg: &VoteConfig,
) -> BTreeMap<K, DiagnosisResult> {
    let mut counts: BTreeMap<K, [usize; NUM_CLASSES]> = BTreeMap::new();
    for r in log.records.iter().filter(|r| cfg.admits(r)) {
        counts.entry(key(r)).or_insert([0; NUM_CLASSES])[r.predicted_label.index()] += 1;
    }
    counts
        .into_iter()
        .map(|(k, c)| (k, DiagnosisResult::from_counts(c).expect("groups are non-empty")))
        .collect()
}

pub fn diagnose_patients(log: &PredictionLog, cfg: &VoteConfig) -> BTreeMap<String, DiagnosisResult> {
    diagnose_grouped(log, |r| r.patient_id.clone(), cfg)
}

pub fn diagnose_slides(log: &PredictionLog, cfg: &VoteConfig) -> BTreeMap<String, DiagnosisResult> {
    diagnose_grouped(log, |r| r.slide_id.clone(), cfg)
}
