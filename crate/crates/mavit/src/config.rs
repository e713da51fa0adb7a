use serde::{Deserialize, Serialize};

use crate::error::MavitError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    /// Built-in CNN whose taps follow the closed-form resolutions in
    /// [`ModelConfig::tap_resolutions`].
    Reduced,
    /// Externally supplied feature extractor; see [`crate::BackboneAdapter`].
    Adapter,
}

/// Component switches for the three ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub use_vtm: bool,
    pub use_dfs: bool,
}

impl Ablation {
    pub const BASELINE: Ablation = Ablation { use_vtm: false, use_dfs: false };
    pub const WITH_VTM: Ablation = Ablation { use_vtm: true, use_dfs: false };
    pub const FULL: Ablation = Ablation { use_vtm: true, use_dfs: true };

    pub fn variant_name(self) -> &'static str {
        match (self.use_vtm, self.use_dfs) {
            (false, false) => "baseline",
            (true, false) => "+VTM",
            (true, true) => "MAViT (+VTM +DFS)",
            (false, true) => "+DFS",
        }
    }
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation::FULL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_size: usize,
    pub num_classes: usize,
    pub backbone: BackboneKind,
    /// Downsampling of the stem; the shallow tap has resolution
    /// `input_size / stem_stride`.
    pub stem_stride: usize,
    pub tap_channels: usize,
    pub vtm_channels: usize,
    pub heads: usize,
    /// Rank `k` of the key/value sequence projections.
    pub proj_dim: usize,
    pub dilation: usize,
    pub ffn_hidden: usize,
    /// Early-fusion grid size; defaults to the intermediate tap resolution.
    #[serde(default)]
    pub fusion_resolution: Option<usize>,
    /// Channels after the early-fusion projection; defaults to `3 * tap_channels`.
    #[serde(default)]
    pub early_out_channels: Option<usize>,
    pub head_kernel: usize,
    pub head_hidden: usize,
    #[serde(default)]
    pub ablation: Ablation,
}

impl ModelConfig {
    /// Full-size geometry: 512 px patches, 32/18/10 taps, 32x32x128 into VTM.
    pub fn paper() -> Self {
        Self {
            input_size: 512,
            num_classes: histocad_core::NUM_CLASSES,
            backbone: BackboneKind::Reduced,
            stem_stride: 16,
            tap_channels: 64,
            vtm_channels: 128,
            heads: 4,
            proj_dim: 64,
            dilation: 2,
            ffn_hidden: 256,
            fusion_resolution: None,
            early_out_channels: None,
            head_kernel: 3,
            head_hidden: 128,
            ablation: Ablation::FULL,
        }
    }

    /// 64 px patches with full channel widths (taps 16/9/5).
    pub fn toy() -> Self {
        Self { input_size: 64, stem_stride: 4, ..Self::paper() }
    }

    /// Narrow 32 px model that trains in minutes on one CPU core.
    pub fn tiny() -> Self {
        Self {
            input_size: 32,
            stem_stride: 4,
            tap_channels: 8,
            vtm_channels: 16,
            heads: 2,
            proj_dim: 16,
            dilation: 2,
            ffn_hidden: 32,
            head_kernel: 1,
            head_hidden: 32,
            ..Self::paper()
        }
    }

    /// Small enough (< 5e4 parameters) for exhaustive finite differences.
    pub fn micro() -> Self {
        Self {
            input_size: 16,
            stem_stride: 4,
            tap_channels: 4,
            vtm_channels: 8,
            heads: 2,
            proj_dim: 8,
            dilation: 2,
            ffn_hidden: 16,
            head_kernel: 3,
            head_hidden: 8,
            ..Self::paper()
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    pub fn shallow_resolution(&self) -> usize {
        self.input_size / self.stem_stride.max(1)
    }

    /// Shallow, intermediate and deep tap resolutions. Each step scales by
    /// 9/16 rounded half up, which yields 32/18/10 at 512 px and 16/9/5 at 64 px.
    pub fn tap_resolutions(&self) -> (usize, usize, usize) {
        let s = self.shallow_resolution();
        let step = |r: usize| (9 * r + 8) / 16;
        let m = step(s);
        (s, m, step(m))
    }

    /// Resolution of the map entering the transformer module.
    pub fn vtm_resolution(&self) -> usize {
        self.shallow_resolution()
    }

    pub fn tokens(&self) -> usize {
        self.vtm_resolution() * self.vtm_resolution()
    }

    pub fn fusion_resolution(&self) -> usize {
        self.fusion_resolution.unwrap_or_else(|| self.tap_resolutions().1)
    }

    pub fn early_out_channels(&self) -> usize {
        self.early_out_channels.unwrap_or(3 * self.tap_channels)
    }

    /// Channel count seen by the prediction head.
    pub fn head_channels(&self) -> usize {
        if self.ablation.use_dfs {
            self.early_out_channels() + self.vtm_channels
        } else {
            self.vtm_channels
        }
    }

    pub fn validate(&self) -> Result<(), MavitError> {
        let err = |m: String| Err(MavitError::Config(m));
        let positive = [
            ("input_size", self.input_size),
            ("stem_stride", self.stem_stride),
            ("tap_channels", self.tap_channels),
            ("vtm_channels", self.vtm_channels),
            ("heads", self.heads),
            ("proj_dim", self.proj_dim),
            ("dilation", self.dilation),
            ("ffn_hidden", self.ffn_hidden),
            ("head_kernel", self.head_kernel),
            ("head_hidden", self.head_hidden),
            ("fusion_resolution", self.fusion_resolution()),
            ("early_out_channels", self.early_out_channels()),
        ];
        for (name, v) in positive {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        if self.num_classes < 2 {
            return err(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.input_size % self.stem_stride != 0 {
            return err(format!(
                "input_size {} is not a multiple of stem_stride {}",
                self.input_size, self.stem_stride
            ));
        }
        if self.vtm_channels % self.heads != 0 {
            return err(format!(
                "vtm_channels {} not divisible by heads {}",
                self.vtm_channels, self.heads
            ));
        }
        let (s, m, d) = self.tap_resolutions();
        if !(s > m && m > d && d >= 1) {
            return err(format!("tap resolutions {s}/{m}/{d} are not strictly decreasing"));
        }
        if self.proj_dim > self.tokens() {
            return err(format!(
                "proj_dim {} exceeds the {} tokens of a {s}x{s} map",
                self.proj_dim,
                self.tokens()
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for cfg in [ModelConfig::paper(), ModelConfig::toy(), ModelConfig::tiny(), ModelConfig::micro()] {
            cfg.validate().unwrap();
        }
        assert_eq!(ModelConfig::paper().tap_resolutions(), (32, 18, 10));
        assert_eq!(ModelConfig::toy().tap_resolutions(), (16, 9, 5));
        assert_eq!(ModelConfig::paper().head_channels(), 320);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad_heads = ModelConfig { heads: 3, ..ModelConfig::toy() };
        assert!(matches!(bad_heads.validate(), Err(MavitError::Config(m)) if m.contains("divisible")));
        let bad_k = ModelConfig { proj_dim: 300, ..ModelConfig::toy() };
        assert!(bad_k.validate().is_err());
        let bad_classes = ModelConfig { num_classes: 1, ..ModelConfig::toy() };
        assert!(bad_classes.validate().is_err());
        let too_small = ModelConfig { input_size: 8, ..ModelConfig::toy() };
        assert!(too_small.validate().is_err());
    }

    #[test]
    fn serde_roundtrip() {
        let cfg = ModelConfig::tiny().with_ablation(Ablation::WITH_VTM);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ModelConfig>(&text).unwrap(), cfg);
    }
}
