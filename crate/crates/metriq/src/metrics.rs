use serde::{Deserialize, Serialize};

use crate::confusion::ConfusionMatrix;
use crate::error::MetricError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Tile,
    Patient,
}

impl std::str::FromStr for Level {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tile" | "patch" => Ok(Level::Tile),
            "patient" => Ok(Level::Patient),
            other => Err(MetricError::Validation(format!("unknown level `{other}`"))),
        }
    }
}

/// One-vs-rest counts and rates of a single class. Rates whose denominator is
/// zero are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_index: usize,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
}

impl ClassMetrics {
    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub level: Level,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    /// Fraction of units on the diagonal.
    pub overall_accuracy: f64,
    pub total: u64,
    pub per_class: Vec<ClassMetrics>,
    /// Classes with no true instances, left out of the sensitivity and F1 means.
    pub excluded_classes: Vec<usize>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn class_metrics(cm: &ConfusionMatrix, c: usize) -> ClassMetrics {
    let total = cm.total();
    let tp = cm.get(c, c);
    let fn_ = cm.row_sum(c) - tp;
    let fp = cm.col_sum(c) - tp;
    let tn = total - tp - fn_ - fp;
    ClassMetrics {
        class_index: c,
        tp,
        fp,
        fn_,
        tn,
        accuracy: (tp + tn) as f64 / total as f64,
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
        f1: (tp + fn_ > 0).then(|| 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64),
    }
}

/// Unweighted means of the per-class one-vs-rest metrics.
pub fn macro_metrics(cm: &ConfusionMatrix, level: Level) -> Result<MetricReport, MetricError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricError::EmptyInput);
    }
    let per_class: Vec<ClassMetrics> = (0..cm.k()).map(|c| class_metrics(cm, c)).collect();
    Ok(MetricReport {
        level,
        accuracy: mean(per_class.iter().map(|m| m.accuracy)),
        sensitivity: mean(per_class.iter().filter_map(|m| m.sensitivity)),
        specificity: mean(per_class.iter().filter_map(|m| m.specificity)),
        f1: mean(per_class.iter().filter_map(|m| m.f1)),
        overall_accuracy: cm.trace() as f64 / total as f64,
        total,
        excluded_classes: per_class.iter().filter(|m| m.support() == 0).map(|m| m.class_index).collect(),
        per_class,
    })
}
