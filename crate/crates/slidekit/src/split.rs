use std::collections::{BTreeMap, BTreeSet};

use histocad_core::ClassLabel;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SlideError;
use crate::manifest::SlideManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl DatasetSplit {
    pub fn partition_of(&self, patient: &str) -> Option<Partition> {
        if self.train.contains(patient) {
            Some(Partition::Train)
        } else if self.val.contains(patient) {
            Some(Partition::Val)
        } else if self.test.contains(patient) {
            Some(Partition::Test)
        } else {
            None
        }
    }

    pub fn get(&self, p: Partition) -> &BTreeSet<String> {
        match p {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }

    fn get_mut(&mut self, p: Partition) -> &mut BTreeSet<String> {
        match p {
            Partition::Train => &mut self.train,
            Partition::Val => &mut self.val,
            Partition::Test => &mut self.test,
        }
    }

    pub fn is_disjoint(&self) -> bool {
        self.train.is_disjoint(&self.val) && self.train.is_disjoint(&self.test) && self.val.is_disjoint(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits `n` items by `ratios` with largest-remainder rounding; ties go to
/// the earlier partition.
pub fn largest_remainder(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: [usize; 3] = [0; 3];
    for i in 0..3 {
        counts[i] = exact[i].floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for i in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    counts
}

/// The class of each patient: the most frequent label over their slides,
/// ties broken by canonical class order.
pub fn patient_classes(manifests: &[SlideManifest]) -> BTreeMap<String, ClassLabel> {
    let mut votes: BTreeMap<&str, [usize; histocad_core::NUM_CLASSES]> = BTreeMap::new();
    for m in manifests {
        votes.entry(&m.patient_id).or_insert([0; histocad_core::NUM_CLASSES])[m.class_label.index()] += 1;
    }
    votes
        .into_iter()
        .map(|(p, v)| {
            let best = v.iter().enumerate().fold(0, |b, (i, &c)| if c > v[b] { i } else { b });
            (p.to_string(), ClassLabel::from_index(best).expect("index within class list"))
        })
        .collect()
}

/// Patient-level split stratified by class.
pub fn split_patients(manifests: &[SlideManifest], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit, SlideError> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(SlideError::Invalid(format!("ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let needed = ratios.iter().filter(|r| **r > 0.0).count();
    let mut by_class: BTreeMap<ClassLabel, Vec<String>> = BTreeMap::new();
    for (patient, class) in patient_classes(manifests) {
        by_class.entry(class).or_default().push(patient);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit::default();
    for (class, mut patients) in by_class {
        if patients.len() < needed {
            return Err(SlideError::Stratification { class: class.to_string(), patients: patients.len(), needed });
        }
        patients.shuffle(&mut rng);
        let counts = largest_remainder(patients.len(), ratios);
        let mut it = patients.into_iter();
        for (p, c) in Partition::ALL.into_iter().zip(counts) {
            split.get_mut(p).extend(it.by_ref().take(c));
        }
    }
    Ok(split)
}

pub fn parse_ratios(s: &str) -> Result<[f64; 3], SlideError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| SlideError::Invalid(format!("ratios `{s}`: {e}")))?;
    <[f64; 3]>::try_from(parts).map_err(|_| SlideError::Invalid(format!("expected three ratios, got `{s}`")))
}
