//! Transformer module: a residual path around a transformer block followed by
//! a dilated convolution.

use histocad_core::Scalar;
use rand_chacha::ChaCha8Rng;

use crate::attention::MultiHeadLinearAttention;
use crate::config::ModelConfig;
use crate::error::MavitError;
use crate::graph::{Graph, Var};
use crate::layers::{Conv2d, Linear, Norm};
use crate::params::ParamStore;
use crate::shapes::{record, ShapeTrace};

/// Pre-norm transformer block:
/// `x + attn(norm(x))`, then `y + ffn(norm(y))` with a GELU feed-forward.
#[derive(Debug, Clone)]
pub struct TBlock {
    norm1: Norm,
    attn: MultiHeadLinearAttention,
    norm2: Norm,
    fc1: Linear,
    fc2: Linear,
}

impl TBlock {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, cfg: &ModelConfig) -> Self {
        let c = cfg.vtm_channels;
        Self {
            norm1: Norm::new(store, &format!("{name}.norm1"), c),
            attn: MultiHeadLinearAttention::new(
                store,
                rng,
                &format!("{name}.attn"),
                c,
                cfg.heads,
                cfg.tokens(),
                cfg.proj_dim,
            ),
            norm2: Norm::new(store, &format!("{name}.norm2"), c),
            fc1: Linear::new(store, rng, &format!("{name}.ffn.fc1"), c, cfg.ffn_hidden),
            fc2: Linear::new(store, rng, &format!("{name}.ffn.fc2"), cfg.ffn_hidden, c),
        }
    }

    /// `x` is `[tokens, channels]`; the output has the same shape.
    pub fn build<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, MavitError> {
        let h = self.norm1.apply(g, x)?;
        let h = self.attn.apply(g, h)?;
        let y = g.add(x, h)?;
        let h = self.norm2.apply(g, y)?;
        let h = self.fc1.apply(g, h)?;
        let h = g.gelu(h);
        let h = self.fc2.apply(g, h)?;
        g.add(y, h)
    }
}

#[derive(Debug, Clone)]
pub struct Vtm {
    tblock: TBlock,
    dilated: Conv2d,
}

impl Vtm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let c = cfg.vtm_channels;
        Self {
            tblock: TBlock::new(store, rng, "vtm.tblock", cfg),
            dilated: Conv2d::same(store, rng, "vtm.dilated", c, c, 3, cfg.dilation),
        }
    }

    pub fn tblock(&self) -> &TBlock {
        &self.tblock
    }

    /// `input + dilated_conv(tblock(flatten(input)))`.
    pub fn build<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        map: Var,
        trace: &mut Option<&mut ShapeTrace>,
    ) -> Result<Var, MavitError> {
        let shape = g.shape(map).to_vec();
        let [h, w, c] = shape[..] else {
            return Err(MavitError::Shape(format!("VTM expects a [H, W, C] map, got {shape:?}")));
        };
        let tokens = g.reshape(map, vec![h * w, c])?;
        record(trace, "vtm.tokens", g.shape(tokens));
        let t = self.tblock.build(g, tokens)?;
        record(trace, "vtm.tblock", g.shape(t));
        let t = g.reshape(t, vec![h, w, c])?;
        let d = self.dilated.apply(g, t)?;
        record(trace, "vtm.dilated", g.shape(d));
        g.add(map, d)
    }
}
