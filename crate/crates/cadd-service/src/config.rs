use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

pub const ENV_CHECKPOINT: &str = "CADD_CHECKPOINT";
pub const ENV_DATA_DIR: &str = "CADD_DATA_DIR";
pub const ENV_WORKERS: &str = "CADD_WORKERS";
pub const ENV_PORT: &str = "CADD_PORT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub workers: usize,
    pub host: String,
    pub port: u16,
    /// Edge of the analysis tiles in slide pixels; tiles are resized to the
    /// model input before inference.
    pub tile_size: u32,
    /// Tiles padded beyond this fraction do not vote.
    pub max_pad_fraction: Option<f64>,
    /// Pixels per tile edge in label maps and heatmaps.
    pub render_scale: u32,
    pub max_upload_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("cadd-data"),
            checkpoint: PathBuf::from("model.ckpt"),
            workers: 2,
            host: "127.0.0.1".into(),
            port: 8080,
            tile_size: histocad_slidekit::DEFAULT_TILE_SIZE,
            max_pad_fraction: Some(0.5),
            render_scale: 8,
            max_upload_bytes: 1 << 30,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))
    }

    /// Reads the optional config file, then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ServiceError> {
        let mut cfg = match path {
            Some(p) => Self::from_toml(&std::fs::read_to_string(p)?)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ServiceError> {
        if let Some(v) = get(ENV_CHECKPOINT) {
            self.checkpoint = v.into();
        }
        if let Some(v) = get(ENV_DATA_DIR) {
            self.data_dir = v.into();
        }
        if let Some(v) = get(ENV_WORKERS) {
            self.workers = v.parse().map_err(|_| ServiceError::Config(format!("{ENV_WORKERS}={v} is not a count")))?;
        }
        if let Some(v) = get(ENV_PORT) {
            self.port = v.parse().map_err(|_| ServiceError::Config(format!("{ENV_PORT}={v} is not a port")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.workers == 0 {
            return Err(ServiceError::Config("workers must be at least 1".into()));
        }
        if self.tile_size == 0 || self.render_scale == 0 {
            return Err(ServiceError::Config("tile_size and render_scale must be positive".into()));
        }
        if let Some(p) = self.max_pad_fraction {
            if !(0.0..=1.0).contains(&p) {
                return Err(ServiceError::Config("max_pad_fraction must be in [0, 1]".into()));
            }
        }
        Ok(())
    }
}
