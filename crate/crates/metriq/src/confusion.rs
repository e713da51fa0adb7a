use histocad_core::{ClassLabel, PredictionLog, NUM_CLASSES};
use serde::{Deserialize, Serialize};

use crate::error::MetricError;

/// `k x k` counts; rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self { k, counts: vec![0; k * k] }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self, MetricError> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(MetricError::Validation("confusion matrix must be square".into()));
        }
        Ok(Self { k, counts: rows.concat() })
    }

    pub fn from_pairs(k: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, MetricError> {
        let mut cm = Self::new(k);
        for (t, p) in pairs {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    /// One unit per record; every record must carry a true label.
    pub fn from_log(log: &PredictionLog) -> Result<Self, MetricError> {
        let mut cm = Self::new(NUM_CLASSES);
        for r in &log.records {
            let t = r.true_label.ok_or_else(|| MetricError::MissingTruth { slide_id: r.slide_id.clone() })?;
            cm.add(t.index(), r.predicted_label.index())?;
        }
        Ok(cm)
    }

    pub fn from_labels(pairs: &[(ClassLabel, ClassLabel)]) -> Self {
        Self::from_pairs(NUM_CLASSES, pairs.iter().map(|(t, p)| (t.index(), p.index()))).expect("canonical labels")
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<(), MetricError> {
        for index in [truth, predicted] {
            if index >= self.k {
                return Err(MetricError::Label { index, k: self.k });
            }
        }
        self.counts[truth * self.k + predicted] += 1;
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.k).map(|c| self.get(truth, c)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.k).map(|r| self.get(r, predicted)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k.max(1)).map(<[u64]>::to_vec).collect()
    }

    /// Sub-matrix over `classes`, in the given order.
    pub fn restrict(&self, classes: &[usize]) -> Self {
        let k = classes.len();
        let mut out = Self::new(k);
        for (i, &r) in classes.iter().enumerate() {
            for (j, &c) in classes.iter().enumerate() {
                out.counts[i * k + j] = self.get(r, c);
            }
        }
        out
    }

    /// Same matrix with classes reordered: new class `i` is old `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        self.restrict(order)
    }
}
