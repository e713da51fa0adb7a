//! Dual multi-scale fusion.
//!
//! Early fusion aligns the three backbone taps on one grid and concatenates
//! them; late fusion concatenates that result with the transformer output.

use histocad_core::Scalar;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::MavitError;
use crate::features::FeatureMap;
use crate::graph::{ConvGeometry, Graph, Padding, Var};
use crate::layers::Conv2d;
use crate::params::ParamStore;
use crate::shapes::{record, ShapeTrace};

#[derive(Debug, Clone)]
pub struct EarlyFusion {
    deep_conv: Conv2d,
    mid_conv: Conv2d,
    proj: Conv2d,
    resolution: usize,
}

impl EarlyFusion {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let tap = cfg.tap_channels;
        Self {
            deep_conv: Conv2d::same(store, rng, "fusion.deep_conv", tap, tap, 2, 1),
            mid_conv: Conv2d::same(store, rng, "fusion.intermediate_conv", tap, tap, 1, 1),
            proj: Conv2d::new(
                store,
                rng,
                "fusion.proj",
                3 * tap,
                cfg.early_out_channels(),
                ConvGeometry::new(1, 1, 1, Padding::Valid),
            ),
            resolution: cfg.fusion_resolution(),
        }
    }

    pub fn build<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        shallow: Var,
        intermediate: Var,
        deep: Var,
        trace: &mut Option<&mut ShapeTrace>,
    ) -> Result<Var, MavitError> {
        let r = self.resolution;
        let d = self.deep_conv.apply(g, deep)?;
        record(trace, "early.deep_conv", g.shape(d));
        let (dh, dw) = (g.shape(d)[0], g.shape(d)[1]);
        let d = g.resize(d, 2 * dh, 2 * dw)?;
        record(trace, "early.deep_up2", g.shape(d));
        let d = g.resize(d, r, r)?;
        record(trace, "early.deep", g.shape(d));

        let m = self.mid_conv.apply(g, intermediate)?;
        let m = g.resize(m, r, r)?;
        record(trace, "early.intermediate", g.shape(m));

        let s = g.resize(shallow, r, r)?;
        record(trace, "early.shallow", g.shape(s));

        let cat = g.concat(&[s, m, d])?;
        record(trace, "early.concat", g.shape(cat));
        let out = self.proj.apply(g, cat)?;
        record(trace, "early.out", g.shape(out));
        Ok(out)
    }
}

/// Resizes `early` to the grid of `vtm_out` and concatenates channels
/// (`early` first).
pub fn build_late_fusion<T: Scalar>(
    g: &mut Graph<'_, T>,
    early: Var,
    vtm_out: Var,
    trace: &mut Option<&mut ShapeTrace>,
) -> Result<Var, MavitError> {
    let (h, w) = (g.shape(vtm_out)[0], g.shape(vtm_out)[1]);
    let e = g.resize(early, h, w)?;
    record(trace, "late.early_resized", g.shape(e));
    let out = g.concat(&[e, vtm_out])?;
    record(trace, "late.out", g.shape(out));
    Ok(out)
}

/// Parameter-free late fusion on concrete maps.
pub fn late_fusion<T: Scalar>(early: &FeatureMap<T>, vtm_out: &FeatureMap<T>) -> Result<FeatureMap<T>, MavitError> {
    let mut g = Graph::new();
    let e = g.input(early.tensor().clone());
    let v = g.input(vtm_out.tensor().clone());
    let out = build_late_fusion(&mut g, e, v, &mut None)?;
    FeatureMap::from_tensor(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn late_fusion_channel_arithmetic() {
        let early = FeatureMap::<f64>::new(3, 3, 4, vec![0.5; 36]).unwrap();
        let vtm = FeatureMap::<f64>::new(5, 5, 2, vec![1.0; 50]).unwrap();
        let out = late_fusion(&early, &vtm).unwrap();
        assert_eq!(out.dims(), (5, 5, 6));
        // Resizing a constant map keeps it constant.
        assert!(out.values().chunks(6).all(|px| px == [0.5, 0.5, 0.5, 0.5, 1.0, 1.0]));
    }

    #[test]
    fn same_resolution_is_pure_concat() {
        let a: Vec<f64> = (0..8).map(|v| v as f64).collect();
        let b: Vec<f64> = (0..4).map(|v| 100.0 + v as f64).collect();
        let early = FeatureMap::new(2, 2, 2, a).unwrap();
        let vtm = FeatureMap::new(2, 2, 1, b).unwrap();
        let out = late_fusion(&early, &vtm).unwrap();
        assert_eq!(out.values(), &[0.0, 1.0, 100.0, 2.0, 3.0, 101.0, 4.0, 5.0, 102.0, 6.0, 7.0, 103.0]);
    }
}
