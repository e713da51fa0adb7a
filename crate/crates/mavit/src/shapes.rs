//! Closed-form shape calculator for every named stage of the network, and the
//! trace type the executed forward pass fills in. The calculator uses only the
//! config arithmetic, never tensors, so comparing it with a trace is an
//! independent check of the layer wiring.

use crate::config::ModelConfig;

/// Ordered `(stage, shape)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShapeTrace {
    pub stages: Vec<(String, Vec<usize>)>,
}

impl ShapeTrace {
    pub fn record(&mut self, stage: &str, shape: &[usize]) {
        self.stages.push((stage.to_string(), shape.to_vec()));
    }

    pub fn get(&self, stage: &str) -> Option<&[usize]> {
        self.stages.iter().find(|(s, _)| s == stage).map(|(_, v)| v.as_slice())
    }
}

pub(crate) fn record(trace: &mut Option<&mut ShapeTrace>, stage: &str, shape: &[usize]) {
    if let Some(t) = trace.as_deref_mut() {
        t.record(stage, shape);
    }
}

/// Expected shapes for a config, in forward order.
pub fn infer_shapes(cfg: &ModelConfig) -> ShapeTrace {
    let mut t = ShapeTrace::default();
    let (s, m, d) = cfg.tap_resolutions();
    let tap = cfg.tap_channels;
    let vc = cfg.vtm_channels;
    let v = cfg.vtm_resolution();
    let fr = cfg.fusion_resolution();

    t.record("backbone.stem", &[s, s, tap]);
    t.record("backbone.shallow", &[s, s, tap]);
    t.record("backbone.intermediate", &[m, m, tap]);
    t.record("backbone.deep", &[d, d, tap]);
    t.record("backbone.final", &[v, v, vc]);

    if cfg.ablation.use_vtm {
        t.record("vtm.tokens", &[v * v, vc]);
        t.record("vtm.tblock", &[v * v, vc]);
        t.record("vtm.dilated", &[v, v, vc]);
    }
    t.record("vtm.out", &[v, v, vc]);

    if cfg.ablation.use_dfs {
        t.record("early.deep_conv", &[d, d, tap]);
        t.record("early.deep_up2", &[2 * d, 2 * d, tap]);
        t.record("early.deep", &[fr, fr, tap]);
        t.record("early.intermediate", &[fr, fr, tap]);
        t.record("early.shallow", &[fr, fr, tap]);
        t.record("early.concat", &[fr, fr, 3 * tap]);
        t.record("early.out", &[fr, fr, cfg.early_out_channels()]);
        t.record("late.early_resized", &[v, v, cfg.early_out_channels()]);
        t.record("late.out", &[v, v, cfg.early_out_channels() + vc]);
    }

    let hc = cfg.head_channels();
    t.record("head.in", &[v, v, hc]);
    t.record("head.conv1", &[v, v, hc]);
    t.record("head.conv2", &[v, v, hc]);
    t.record("head.pool", &[hc]);
    t.record("head.fc1", &[cfg.head_hidden]);
    t.record("head.logits", &[cfg.num_classes]);
    t
}
