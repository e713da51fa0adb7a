use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use histocad_core::{ClassLabel, Modality};
use serde::{Deserialize, Serialize};

use crate::error::SlideError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlideManifest {
    pub slide_id: String,
    pub patient_id: String,
    pub class_label: ClassLabel,
    pub modality: Modality,
    pub width_px: u32,
    pub height_px: u32,
    /// Source raster (PNG/TIFF) or directory of pre-cut tiles.
    pub tile_source: PathBuf,
}

impl SlideManifest {
    pub fn validate(&self) -> Result<(), SlideError> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(SlideError::Invalid(format!("slide `{}` has zero size", self.slide_id)));
        }
        Ok(())
    }
}

pub fn validate_cohort(manifests: &[SlideManifest]) -> Result<(), SlideError> {
    let mut seen = HashSet::new();
    for m in manifests {
        m.validate()?;
        if !seen.insert(m.slide_id.as_str()) {
            return Err(SlideError::DuplicateSlide(m.slide_id.clone()));
        }
    }
    Ok(())
}

pub fn parse_manifest(text: &str) -> Result<Vec<SlideManifest>, SlideError> {
    let manifests: Vec<SlideManifest> = serde_json::from_str(text).map_err(|e| SlideError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    validate_cohort(&manifests)?;
    Ok(manifests)
}

pub fn read_manifest(path: &Path) -> Result<Vec<SlideManifest>, SlideError> {
    parse_manifest(&fs::read_to_string(path)?)
}

/// Writes a pretty-printed JSON array via a temporary file and rename.
pub fn write_manifest(path: &Path, manifests: &[SlideManifest]) -> Result<(), SlideError> {
    validate_cohort(manifests)?;
    let text = serde_json::to_string_pretty(manifests).map_err(|e| SlideError::Invalid(e.to_string()))?;
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.write_all(b"\n")?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}
