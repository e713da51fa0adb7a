use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use histocad_core::{ClassLabel, Modality};
use histocad_slidekit::{
    read_manifest, sample_patches, split_patients, tile_region, DatasetSplit, Partition, Roi, SlideManifest,
};
use image::imageops::{self, FilterType};
use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::TrainError;
use crate::synthetic::{synthetic_samples, SyntheticSpec};

/// One labelled patch and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub slide_id: String,
    pub patient_id: String,
    pub grid_row: usize,
    pub grid_col: usize,
    pub label: ClassLabel,
    pub patch: RgbImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Class names in label-index order.
    pub classes: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self { classes: ClassLabel::names(), samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn patients(&self) -> BTreeSet<&str> {
        self.samples.iter().map(|s| s.patient_id.as_str()).collect()
    }

    /// Per-class sample counts, indexed by label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for s in &self.samples {
            counts[s.label.index()] += 1;
        }
        counts
    }

    /// Lightweight manifests (one per slide) for patient-level splitting.
    pub fn slide_manifests(&self) -> Vec<SlideManifest> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for s in &self.samples {
            if seen.insert(s.slide_id.clone()) {
                out.push(SlideManifest {
                    slide_id: s.slide_id.clone(),
                    patient_id: s.patient_id.clone(),
                    class_label: s.label,
                    modality: Modality::Surgical,
                    width_px: s.patch.width(),
                    height_px: s.patch.height(),
                    tile_source: PathBuf::new(),
                });
            }
        }
        out
    }

    pub fn split(&self, ratios: [f64; 3], seed: u64) -> Result<DatasetSplit, TrainError> {
        Ok(split_patients(&self.slide_manifests(), ratios, seed)?)
    }

    /// Samples whose patient is in `partition`.
    pub fn subset(&self, split: &DatasetSplit, partition: Partition) -> Dataset {
        let ids = split.get(partition);
        Dataset {
            classes: self.classes.clone(),
            samples: self.samples.iter().filter(|s| ids.contains(&s.patient_id)).cloned().collect(),
        }
    }
}

/// Train/val/test subsets and the patient split they came from.
#[derive(Debug, Clone)]
pub struct Splits {
    pub split: DatasetSplit,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn new(data: &Dataset, split: DatasetSplit) -> Self {
        Self {
            train: data.subset(&split, Partition::Train),
            val: data.subset(&split, Partition::Val),
            test: data.subset(&split, Partition::Test),
            split,
        }
    }

    pub fn get(&self, partition: Partition) -> &Dataset {
        match partition {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }
}

/// Where training patches come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSpec {
    Synthetic(SyntheticSpec),
    /// Patches sampled from every slide of a manifest and resized to the model input.
    Manifest {
        manifest: PathBuf,
        patches_per_slide: usize,
        tile_size: u32,
        seed: u64,
    },
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Synthetic(SyntheticSpec::default())
    }
}

impl DataSpec {
    pub fn load(&self, input_size: usize) -> Result<Dataset, TrainError> {
        match self {
            DataSpec::Synthetic(spec) => Ok(Dataset::new(synthetic_samples(spec, input_size as u32))),
            DataSpec::Manifest { manifest, patches_per_slide, tile_size, seed } => {
                let slides = read_manifest(manifest)?;
                manifest_samples(&slides, *patches_per_slide, *tile_size, *seed, input_size as u32)
            }
        }
    }

    pub fn read(path: &Path) -> Result<Self, TrainError> {
        read_config(path)
    }
}

fn manifest_samples(
    slides: &[SlideManifest],
    per_slide: usize,
    tile_size: u32,
    seed: u64,
    input_size: u32,
) -> Result<Dataset, TrainError> {
    let per: Vec<Vec<Sample>> = slides
        .par_iter()
        .enumerate()
        .map(|(i, slide)| -> Result<Vec<Sample>, TrainError> {
            let grid = tile_region(slide, Roi::whole(slide), tile_size)?;
            let tiles = sample_patches(&grid, per_slide, seed.wrapping_add(i as u64), true)?;
            Ok(tiles
                .into_iter()
                .map(|t| Sample {
                    slide_id: slide.slide_id.clone(),
                    patient_id: slide.patient_id.clone(),
                    grid_row: t.grid_row as usize,
                    grid_col: t.grid_col as usize,
                    label: slide.class_label,
                    patch: imageops::resize(&t.to_image(), input_size, input_size, FilterType::Triangle),
                })
                .collect())
        })
        .collect::<Result<_, _>>()?;
    Ok(Dataset::new(per.into_iter().flatten().collect()))
}

/// Reads a TOML file, or JSON for any other extension.
pub fn read_config<C: serde::de::DeserializeOwned>(path: &Path) -> Result<C, TrainError> {
    let text = std::fs::read_to_string(path)?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|reason| TrainError::Input { path: path.to_path_buf(), reason })
}
