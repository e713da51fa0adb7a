use serde::{Deserialize, Serialize};

use crate::error::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentFlags {
    pub rot90s: bool,
    pub flips: bool,
    pub color_jitter: bool,
}

impl AugmentFlags {
    pub const NONE: AugmentFlags = AugmentFlags { rot90s: false, flips: false, color_jitter: false };
    pub const ALL: AugmentFlags = AugmentFlags { rot90s: true, flips: true, color_jitter: true };
}

impl Default for AugmentFlags {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    pub augmentation: AugmentFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            momentum: 0.9,
            batch_size: 8,
            max_epochs: 100,
            patience: 10,
            min_delta: 0.0,
            seed: 0,
            augmentation: AugmentFlags::ALL,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config("momentum must be in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(TrainError::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::Config("max_epochs must be at least 1".into()));
        }
        if self.min_delta < 0.0 {
            return Err(TrainError::Config("min_delta must be non-negative".into()));
        }
        Ok(())
    }
}
