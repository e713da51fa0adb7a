use std::fmt;
use std::sync::Arc;

use histocad_core::{ClassLabel, Scalar, NUM_CLASSES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{BackboneAdapter, BackboneVars, ReducedBackbone};
use crate::config::{BackboneKind, ModelConfig};
use crate::error::MavitError;
use crate::features::{FeatureMap, FeaturePyramid};
use crate::fusion::{build_late_fusion, late_fusion, EarlyFusion};
use crate::graph::{Graph, Var};
use crate::head::{softmax, PredictionHead};
use crate::params::ParamStore;
use crate::shapes::{record, ShapeTrace};
use crate::tensor::Tensor;
use crate::vtm::Vtm;

/// Hybrid CNN-transformer patch classifier.
///
/// Inference methods take `&self` and never mutate, so a loaded model can be
/// shared across threads behind an `Arc`.
#[derive(Clone)]
pub struct Mavit<T: Scalar> {
    cfg: ModelConfig,
    classes: Vec<String>,
    params: ParamStore<T>,
    backbone: Option<ReducedBackbone>,
    adapter: Option<Arc<dyn BackboneAdapter<T>>>,
    vtm: Option<Vtm>,
    fusion: Option<EarlyFusion>,
    head: PredictionHead,
}

impl<T: Scalar> fmt::Debug for Mavit<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mavit")
            .field("cfg", &self.cfg)
            .field("parameters", &self.parameter_count())
            .field("adapter", &self.adapter.is_some())
            .finish()
    }
}

/// Default class names for a config: the canonical list for 11 classes,
/// `class_<i>` otherwise.
pub fn default_classes(num_classes: usize) -> Vec<String> {
    if num_classes == NUM_CLASSES {
        ClassLabel::names()
    } else {
        (0..num_classes).map(|i| format!("class_{i}")).collect()
    }
}

impl<T: Scalar> Mavit<T> {
    /// Randomly initialized model with the built-in backbone.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, MavitError> {
        if cfg.backbone == BackboneKind::Adapter {
            return Err(MavitError::Config("adapter backbone requires Mavit::with_adapter".into()));
        }
        Self::build(cfg, None, seed)
    }

    pub fn with_adapter(cfg: ModelConfig, adapter: Arc<dyn BackboneAdapter<T>>, seed: u64) -> Result<Self, MavitError> {
        if cfg.backbone != BackboneKind::Adapter {
            return Err(MavitError::Config("config does not select the adapter backbone".into()));
        }
        Self::build(cfg, Some(adapter), seed)
    }

    fn build(cfg: ModelConfig, adapter: Option<Arc<dyn BackboneAdapter<T>>>, seed: u64) -> Result<Self, MavitError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let backbone = adapter.is_none().then(|| ReducedBackbone::new(&mut params, &mut rng, &cfg));
        let vtm = cfg.ablation.use_vtm.then(|| Vtm::new(&mut params, &mut rng, &cfg));
        let fusion = cfg.ablation.use_dfs.then(|| EarlyFusion::new(&mut params, &mut rng, &cfg));
        let head = PredictionHead::new(&mut params, &mut rng, &cfg);
        Ok(Self { classes: default_classes(cfg.num_classes), cfg, params, backbone, adapter, vtm, fusion, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn set_classes(&mut self, classes: Vec<String>) -> Result<(), MavitError> {
        if classes.len() != self.cfg.num_classes {
            return Err(MavitError::Config(format!(
                "{} class names for {} outputs",
                classes.len(),
                self.cfg.num_classes
            )));
        }
        self.classes = classes;
        Ok(())
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.params.iter().map(|(n, _)| n.to_string()).collect()
    }

    fn check_patch(&self, patch: &Tensor<T>) -> Result<(), MavitError> {
        let s = self.cfg.input_size;
        if patch.shape() != [s, s, 3] {
            return Err(MavitError::Shape(format!(
                "expected a {s}x{s}x3 patch, got {:?}",
                patch.shape()
            )));
        }
        if !patch.is_finite() {
            return Err(MavitError::NonFinite("input patch".into()));
        }
        Ok(())
    }

    fn build_backbone(
        &self,
        g: &mut Graph<'_, T>,
        patch: &Tensor<T>,
        trace: &mut Option<&mut ShapeTrace>,
    ) -> Result<BackboneVars, MavitError> {
        self.check_patch(patch)?;
        match (&self.backbone, &self.adapter) {
            (Some(b), _) => {
                let x = g.input(patch.clone());
                b.build(g, x, trace)
            }
            (None, Some(a)) => {
                let (pyr, last) = a.extract(patch)?;
                pyr.validate(self.cfg.tap_channels)?;
                let shallow = g.input(pyr.shallow.into_tensor());
                let intermediate = g.input(pyr.intermediate.into_tensor());
                let deep = g.input(pyr.deep.into_tensor());
                let last = g.input(last.into_tensor());
                record(trace, "backbone.shallow", g.shape(shallow));
                record(trace, "backbone.intermediate", g.shape(intermediate));
                record(trace, "backbone.deep", g.shape(deep));
                record(trace, "backbone.final", g.shape(last));
                Ok(BackboneVars { shallow, intermediate, deep, last })
            }
            (None, None) => Err(MavitError::Config("model has no backbone".into())),
        }
    }

    /// Records the whole network on `g` and returns the logits node.
    pub fn build_logits(
        &self,
        g: &mut Graph<'_, T>,
        patch: &Tensor<T>,
        mut trace: Option<&mut ShapeTrace>,
    ) -> Result<Var, MavitError> {
        let trace = &mut trace;
        let bv = self.build_backbone(g, patch, trace)?;
        let vtm_out = match &self.vtm {
            Some(vtm) => vtm.build(g, bv.last, trace)?,
            None => bv.last,
        };
        record(trace, "vtm.out", g.shape(vtm_out));
        let head_in = match &self.fusion {
            Some(fusion) => {
                let early = fusion.build(g, bv.shallow, bv.intermediate, bv.deep, trace)?;
                build_late_fusion(g, early, vtm_out, trace)?
            }
            None => vtm_out,
        };
        self.head.build(g, head_in, trace)
    }

    /// Class probabilities for one patch (`[input_size, input_size, 3]`,
    /// values in `[0, 1]`).
    pub fn forward(&self, patch: &Tensor<T>) -> Result<Vec<T>, MavitError> {
        let mut g = Graph::with_params(&self.params);
        let logits = self.build_logits(&mut g, patch, None)?;
        finite_probs(g.value(logits).data())
    }

    pub fn forward_traced(&self, patch: &Tensor<T>) -> Result<(Vec<T>, ShapeTrace), MavitError> {
        let mut trace = ShapeTrace::default();
        let mut g = Graph::with_params(&self.params);
        let logits = self.build_logits(&mut g, patch, Some(&mut trace))?;
        Ok((finite_probs(g.value(logits).data())?, trace))
    }

    /// The three taps and the map handed to the transformer module.
    pub fn backbone_forward(&self, patch: &Tensor<T>) -> Result<(FeaturePyramid<T>, FeatureMap<T>), MavitError> {
        let mut g = Graph::with_params(&self.params);
        let bv = self.build_backbone(&mut g, patch, &mut None)?;
        let take = |v: Var, stage: &str| -> Result<FeatureMap<T>, MavitError> {
            let m = FeatureMap::from_tensor(g.value(v).clone())?;
            m.ensure_finite(stage)?;
            Ok(m)
        };
        let pyramid = FeaturePyramid {
            shallow: take(bv.shallow, "shallow tap")?,
            intermediate: take(bv.intermediate, "intermediate tap")?,
            deep: take(bv.deep, "deep tap")?,
        };
        Ok((pyramid, take(bv.last, "backbone output")?))
    }

    /// Transformer module; identity when the module is ablated.
    pub fn vtm_forward(&self, map: &FeatureMap<T>) -> Result<FeatureMap<T>, MavitError> {
        let Some(vtm) = &self.vtm else { return Ok(map.clone()) };
        if map.channels() != self.cfg.vtm_channels {
            return Err(MavitError::Shape(format!(
                "VTM input has {} channels, expected {}",
                map.channels(),
                self.cfg.vtm_channels
            )));
        }
        let mut g = Graph::with_params(&self.params);
        let x = g.input(map.tensor().clone());
        let y = vtm.build(&mut g, x, &mut None)?;
        let out = FeatureMap::from_tensor(g.value(y).clone())?;
        out.ensure_finite("VTM output")?;
        Ok(out)
    }

    /// Transformer block on a `[tokens, vtm_channels]` matrix.
    pub fn tblock_forward(&self, tokens: &Tensor<T>) -> Result<Tensor<T>, MavitError> {
        let vtm = self.vtm.as_ref().ok_or_else(|| MavitError::Config("model has no transformer module".into()))?;
        if tokens.shape() != [self.cfg.tokens(), self.cfg.vtm_channels] {
            return Err(MavitError::Shape(format!(
                "expected [{}, {}] tokens, got {:?}",
                self.cfg.tokens(),
                self.cfg.vtm_channels,
                tokens.shape()
            )));
        }
        let mut g = Graph::with_params(&self.params);
        let x = g.input(tokens.clone());
        let y = vtm.tblock().build(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    pub fn early_fusion(&self, pyramid: &FeaturePyramid<T>) -> Result<FeatureMap<T>, MavitError> {
        let fusion = self.fusion.as_ref().ok_or_else(|| MavitError::Config("model has no fusion stage".into()))?;
        pyramid.validate(self.cfg.tap_channels)?;
        let mut g = Graph::with_params(&self.params);
        let s = g.input(pyramid.shallow.tensor().clone());
        let m = g.input(pyramid.intermediate.tensor().clone());
        let d = g.input(pyramid.deep.tensor().clone());
        let y = fusion.build(&mut g, s, m, d, &mut None)?;
        FeatureMap::from_tensor(g.value(y).clone())
    }

    /// Late fusion; returns `vtm_out` unchanged when fusion is ablated.
    pub fn late_fusion(&self, early: &FeatureMap<T>, vtm_out: &FeatureMap<T>) -> Result<FeatureMap<T>, MavitError> {
        if self.fusion.is_none() {
            return Ok(vtm_out.clone());
        }
        late_fusion(early, vtm_out)
    }

    pub fn predict_head(&self, map: &FeatureMap<T>) -> Result<Vec<T>, MavitError> {
        map.ensure_finite("head input")?;
        let mut g = Graph::with_params(&self.params);
        let x = g.input(map.tensor().clone());
        let logits = self.head.build(&mut g, x, &mut None)?;
        finite_probs(g.value(logits).data())
    }

    /// Cross-entropy loss of one labelled patch and its parameter gradients
    /// (aligned with [`Mavit::params`]).
    pub fn loss_and_gradients(&self, patch: &Tensor<T>, target: usize) -> Result<(T, Vec<Tensor<T>>), MavitError> {
        let mut g = Graph::with_params(&self.params);
        let logits = self.build_logits(&mut g, patch, None)?;
        let loss = g.softmax_cross_entropy(logits, target)?;
        let grads = g.backward(loss);
        let mut acc = self.params.zeros_like();
        grads.accumulate_params(&mut acc);
        Ok((g.value(loss).data()[0], acc))
    }

    /// Mean loss and mean gradients over a batch.
    pub fn batch_loss_and_gradients(&self, batch: &[(&Tensor<T>, usize)]) -> Result<(T, Vec<Tensor<T>>), MavitError> {
        if batch.is_empty() {
            return Err(MavitError::Shape("empty batch".into()));
        }
        let mut acc = self.params.zeros_like();
        let mut total = T::zero();
        for (patch, target) in batch {
            let (l, grads) = self.loss_and_gradients(patch, *target)?;
            total += l;
            for (a, g) in acc.iter_mut().zip(&grads) {
                for (x, &y) in a.data_mut().iter_mut().zip(g.data()) {
                    *x += y;
                }
            }
        }
        let inv = T::one() / T::from_count(batch.len());
        for a in acc.iter_mut() {
            for x in a.data_mut() {
                *x *= inv;
            }
        }
        Ok((total * inv, acc))
    }

    /// Mean cross-entropy over a batch without gradients.
    pub fn loss(&self, batch: &[(&Tensor<T>, usize)]) -> Result<T, MavitError> {
        let mut total = T::zero();
        for (patch, target) in batch {
            let mut g = Graph::with_params(&self.params);
            let logits = self.build_logits(&mut g, patch, None)?;
            let l = g.softmax_cross_entropy(logits, *target)?;
            total += g.value(l).data()[0];
        }
        Ok(total / T::from_count(batch.len().max(1)))
    }
}

fn finite_probs<T: Scalar>(logits: &[T]) -> Result<Vec<T>, MavitError> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(MavitError::NonFinite("logits".into()));
    }
    Ok(softmax(logits))
}

/// Converts an interleaved RGB8 buffer of `size x size` pixels into a patch
/// tensor with values scaled to `[0, 1]`.
pub fn patch_from_rgb8<T: Scalar>(pixels: &[u8], size: usize) -> Result<Tensor<T>, MavitError> {
    let scale = T::one() / T::cast(255.0);
    Tensor::new(vec![size, size, 3], pixels.iter().map(|&p| T::cast(p as f64) * scale).collect())
}
