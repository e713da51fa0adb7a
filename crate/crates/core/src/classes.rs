//! Canonical diagnostic class list.
//!
//! The eleven labels are sorted lexicographically (byte order) and that order
//! is the class index used everywhere: probability vectors, confusion matrix
//! rows, palette entries and argmax tie-breaking. Bump [`CLASS_LIST_VERSION`]
//! if the list or its order ever changes; checkpoints record it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const CLASS_LIST_VERSION: u32 = 1;
pub const NUM_CLASSES: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassLabel {
    BreastCarcinoma,
    ColonAdenocarcinoma,
    CutaneousMelanoma,
    GastricAdenocarcinoma,
    GliomaAstrocytoma,
    GliomaGlioblastoma,
    GliomaOligodendroglioma,
    Hepatocarcinoma,
    NsclcAdenocarcinoma,
    NsclcSquamousCellCarcinoma,
    NonTumor,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [
        ClassLabel::BreastCarcinoma,
        ClassLabel::ColonAdenocarcinoma,
        ClassLabel::CutaneousMelanoma,
        ClassLabel::GastricAdenocarcinoma,
        ClassLabel::GliomaAstrocytoma,
        ClassLabel::GliomaGlioblastoma,
        ClassLabel::GliomaOligodendroglioma,
        ClassLabel::Hepatocarcinoma,
        ClassLabel::NsclcAdenocarcinoma,
        ClassLabel::NsclcSquamousCellCarcinoma,
        ClassLabel::NonTumor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::BreastCarcinoma => "Breast Carcinoma",
            ClassLabel::ColonAdenocarcinoma => "Colon Adenocarcinoma",
            ClassLabel::CutaneousMelanoma => "Cutaneous Melanoma",
            ClassLabel::GastricAdenocarcinoma => "Gastric Adenocarcinoma",
            ClassLabel::GliomaAstrocytoma => "Glioma Astrocytoma",
            ClassLabel::GliomaGlioblastoma => "Glioma Glioblastoma",
            ClassLabel::GliomaOligodendroglioma => "Glioma Oligodendroglioma",
            ClassLabel::Hepatocarcinoma => "Hepatocarcinoma",
            ClassLabel::NsclcAdenocarcinoma => "NSCLC: Adenocarcinoma",
            ClassLabel::NsclcSquamousCellCarcinoma => "NSCLC: Squamous Cell Carcinoma",
            ClassLabel::NonTumor => "Non-Tumor",
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ClassLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|c| c.name().to_string()).collect()
    }

    /// Index of the largest entry; ties go to the lowest index, i.e. the
    /// earliest label in canonical order. Returns `None` for empty input.
    pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> Option<usize> {
        let mut best: Option<(usize, T)> = None;
        for (i, &v) in values.iter().enumerate() {
            match best {
                Some((_, b)) if !(v > b) => {}
                _ => best = Some((i, v)),
            }
        }
        best.map(|(i, _)| i)
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown class label `{0}`")]
pub struct UnknownLabel(pub String);

impl FromStr for ClassLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

impl Serialize for ClassLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ClassLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
