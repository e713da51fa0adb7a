use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use histocad_core::{ClassLabel, Modality};
use histocad_slidekit::{load_raster, tile_file_name, tile_image, Roi};
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::fsutil::{is_safe_id, write_atomic};

/// Uploaded pixels: one raster, or a tile archive keyed by grid position.
#[derive(Debug, Clone)]
pub enum SlidePayload {
    Raster { bytes: Vec<u8> },
    Tiles(Vec<((u32, u32), Vec<u8>)>),
}

/// Upload metadata. The pixel source is assigned by the service; a label,
/// when given, is registered as ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadManifest {
    pub slide_id: String,
    pub patient_id: String,
    #[serde(default)]
    pub class_label: Option<ClassLabel>,
    pub modality: Modality,
    pub width_px: u32,
    pub height_px: u32,
}

/// A stored slide.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlideRecord {
    pub slide_id: String,
    pub patient_id: String,
    pub modality: Modality,
    pub width_px: u32,
    pub height_px: u32,
    /// Raster file or tile directory, inside the slide's directory.
    pub tile_source: PathBuf,
}

impl SlideRecord {
    pub fn load_pixels(&self) -> Result<RgbImage, ServiceError> {
        Ok(load_raster(&self.tile_source, self.width_px, self.height_px)?)
    }

    pub fn whole(&self) -> Roi {
        Roi::new(0, 0, self.width_px, self.height_px)
    }

    pub fn grid_dims(&self, tile_size: u32) -> (u32, u32) {
        (self.height_px.div_ceil(tile_size), self.width_px.div_ceil(tile_size))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub label: ClassLabel,
}

/// Slide directories under `<data_dir>/slides/<slide_id>/`.
#[derive(Debug)]
pub struct SlideStore {
    dir: PathBuf,
}

impl SlideStore {
    pub fn open(dir: &Path) -> Result<Self, ServiceError> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn slide_dir(&self, id: &str) -> Result<PathBuf, ServiceError> {
        if !is_safe_id(id) {
            return Err(ServiceError::not_found("slide", id));
        }
        Ok(self.dir.join(id))
    }

    pub fn exists(&self, id: &str) -> bool {
        self.slide_dir(id).map(|d| d.join("manifest.json").is_file()).unwrap_or(false)
    }

    /// Stores the slide under a staging directory, checks that the pixels
    /// load with the declared dimensions, then moves it into place.
    pub fn create(&self, upload: UploadManifest, payload: SlidePayload) -> Result<SlideRecord, ServiceError> {
        if !is_safe_id(&upload.slide_id) {
            return Err(ServiceError::Validation(format!(
                "slide id `{}` must use letters, digits, '-', '_' or '.'",
                upload.slide_id
            )));
        }
        if upload.width_px == 0 || upload.height_px == 0 {
            return Err(ServiceError::Validation("slide dimensions must be positive".into()));
        }
        let final_dir = self.dir.join(&upload.slide_id);
        if final_dir.exists() {
            return Err(ServiceError::Conflict(format!("slide `{}` already exists", upload.slide_id)));
        }
        let staging = self.dir.join(format!(".{}.partial", upload.slide_id));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging)?;
        let staged = (|| -> Result<SlideRecord, ServiceError> {
            let source = match &payload {
                SlidePayload::Raster { bytes } => {
                    let format = image::guess_format(bytes)
                        .map_err(|e| ServiceError::Validation(format!("raster: {e}")))?;
                    let name = format!("source.{}", format.extensions_str().first().copied().unwrap_or("img"));
                    fs::write(staging.join(&name), bytes)?;
                    name
                }
                SlidePayload::Tiles(tiles) => {
                    if tiles.is_empty() {
                        return Err(ServiceError::Validation("tile archive is empty".into()));
                    }
                    let tdir = staging.join("tiles");
                    fs::create_dir_all(&tdir)?;
                    for ((r, c), bytes) in tiles {
                        fs::write(tdir.join(tile_file_name(*r, *c)), bytes)?;
                    }
                    "tiles".to_string()
                }
            };
            load_raster(&staging.join(&source), upload.width_px, upload.height_px)
                .map_err(|e| ServiceError::Validation(e.to_string()))?;
            let record = SlideRecord {
                slide_id: upload.slide_id.clone(),
                patient_id: upload.patient_id.clone(),
                modality: upload.modality,
                width_px: upload.width_px,
                height_px: upload.height_px,
                tile_source: final_dir.join(&source),
            };
            let bytes = serde_json::to_vec_pretty(&record).map_err(|e| ServiceError::Internal(e.to_string()))?;
            fs::write(staging.join("manifest.json"), bytes)?;
            if let Some(label) = upload.class_label {
                let truth = serde_json::to_vec(&GroundTruth { label }).map_err(|e| ServiceError::Internal(e.to_string()))?;
                fs::write(staging.join("truth.json"), truth)?;
            }
            Ok(record)
        })();
        let record = match staged {
            Ok(r) => r,
            Err(e) => {
                let _ = fs::remove_dir_all(&staging);
                return Err(e);
            }
        };
        fs::rename(&staging, &final_dir).map_err(|e| {
            let _ = fs::remove_dir_all(&staging);
            if final_dir.exists() {
                ServiceError::Conflict(format!("slide `{}` already exists", record.slide_id))
            } else {
                e.into()
            }
        })?;
        Ok(record)
    }

    pub fn get(&self, id: &str) -> Result<SlideRecord, ServiceError> {
        let path = self.slide_dir(id)?.join("manifest.json");
        let bytes = fs::read(&path).map_err(|_| ServiceError::not_found("slide", id))?;
        serde_json::from_slice(&bytes).map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))
    }

    pub fn ids(&self) -> Result<Vec<String>, ServiceError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if is_safe_id(&name) && entry.path().join("manifest.json").is_file() {
                ids.push(name);
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn set_truth(&self, id: &str, label: ClassLabel) -> Result<GroundTruth, ServiceError> {
        let dir = self.slide_dir(id)?;
        if !self.exists(id) {
            return Err(ServiceError::not_found("slide", id));
        }
        let truth = GroundTruth { label };
        let bytes = serde_json::to_vec(&truth).map_err(|e| ServiceError::Internal(e.to_string()))?;
        write_atomic(&dir.join("truth.json"), &bytes)?;
        Ok(truth)
    }

    pub fn truth(&self, id: &str) -> Result<Option<GroundTruth>, ServiceError> {
        let path = self.slide_dir(id)?.join("truth.json");
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(
                serde_json::from_slice(&bytes).map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))?,
            )),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// One grid tile as PNG, zero-padded at the slide edge.
    pub fn tile_png(&self, id: &str, row: u32, col: u32, tile_size: u32) -> Result<Vec<u8>, ServiceError> {
        let slide = self.get(id)?;
        let (rows, cols) = slide.grid_dims(tile_size);
        if row >= rows || col >= cols {
            return Err(ServiceError::not_found("tile", format!("{id}/{row}/{col}")));
        }
        let image = slide.load_pixels()?;
        let x0 = col * tile_size;
        let y0 = row * tile_size;
        let roi = Roi::new(x0, y0, tile_size.min(slide.width_px - x0), tile_size.min(slide.height_px - y0));
        let grid = tile_image(&image, roi, tile_size)?;
        encode_png(&grid.tiles[0].to_image())
    }
}

pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>, ServiceError> {
    let mut out = Cursor::new(Vec::new());
    image
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| ServiceError::Internal(format!("png encoding: {e}")))?;
    Ok(out.into_inner())
}
