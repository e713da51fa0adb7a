use histocad_core::Scalar;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::MavitError;
use crate::features::{FeatureMap, FeaturePyramid};
use crate::graph::{ConvGeometry, Graph, Padding, Var};
use crate::layers::Conv2d;
use crate::params::ParamStore;
use crate::shapes::{record, ShapeTrace};
use crate::tensor::Tensor;

/// External feature extractor, e.g. a pretrained CNN, exposing three taps and
/// the map handed to the transformer module. Adapter outputs are treated as
/// constants: no gradient flows into the adapter.
pub trait BackboneAdapter<T: Scalar>: Send + Sync {
    fn extract(&self, patch: &Tensor<T>) -> Result<(FeaturePyramid<T>, FeatureMap<T>), MavitError>;
}

#[derive(Debug, Clone, Copy)]
pub struct BackboneVars {
    pub shallow: Var,
    pub intermediate: Var,
    pub deep: Var,
    pub last: Var,
}

/// Stem patchifies by `stem_stride`; the intermediate and deep taps are
/// convolved then average-pooled to the configured resolutions.
#[derive(Debug, Clone)]
pub struct ReducedBackbone {
    stem: Conv2d,
    shallow: Conv2d,
    mid: Conv2d,
    deep: Conv2d,
    last: Conv2d,
    resolutions: (usize, usize, usize),
}

impl ReducedBackbone {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let tap = cfg.tap_channels;
        let s = cfg.stem_stride;
        Self {
            stem: Conv2d::new(store, rng, "backbone.stem", 3, tap, ConvGeometry::new(s, s, 1, Padding::Valid)),
            shallow: Conv2d::same(store, rng, "backbone.shallow", tap, tap, 3, 1),
            mid: Conv2d::same(store, rng, "backbone.intermediate", tap, tap, 3, 1),
            deep: Conv2d::same(store, rng, "backbone.deep", tap, tap, 3, 1),
            last: Conv2d::same(store, rng, "backbone.final", tap, cfg.vtm_channels, 3, 1),
            resolutions: cfg.tap_resolutions(),
        }
    }

    pub fn build<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        patch: Var,
        trace: &mut Option<&mut ShapeTrace>,
    ) -> Result<BackboneVars, MavitError> {
        let (_, m, d) = self.resolutions;
        let x = self.stem.apply(g, patch)?;
        let x = g.relu(x);
        record(trace, "backbone.stem", g.shape(x));
        let shallow = self.shallow.apply(g, x)?;
        let shallow = g.relu(shallow);
        record(trace, "backbone.shallow", g.shape(shallow));
        let y = self.mid.apply(g, shallow)?;
        let y = g.relu(y);
        let intermediate = g.adaptive_avg_pool(y, m, m)?;
        record(trace, "backbone.intermediate", g.shape(intermediate));
        let z = self.deep.apply(g, intermediate)?;
        let z = g.relu(z);
        let deep = g.adaptive_avg_pool(z, d, d)?;
        record(trace, "backbone.deep", g.shape(deep));
        let last = self.last.apply(g, shallow)?;
        let last = g.relu(last);
        record(trace, "backbone.final", g.shape(last));
        Ok(BackboneVars { shallow, intermediate, deep, last })
    }
}
