use histocad_core::Scalar;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::MavitError;
use crate::graph::{Graph, Var};
use crate::layers::{Conv2d, Linear, Norm};
use crate::params::ParamStore;
use crate::shapes::{record, ShapeTrace};

/// conv -> ReLU -> norm -> conv -> norm, residual add of the head input,
/// global average pooling, two fully connected layers. Produces logits; the
/// softmax is applied by the caller.
#[derive(Debug, Clone)]
pub struct PredictionHead {
    conv1: Conv2d,
    norm1: Norm,
    conv2: Conv2d,
    norm2: Norm,
    fc1: Linear,
    fc2: Linear,
}

impl PredictionHead {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let c = cfg.head_channels();
        let k = cfg.head_kernel;
        Self {
            conv1: Conv2d::same(store, rng, "head.conv1", c, c, k, 1),
            norm1: Norm::new(store, "head.norm1", c),
            conv2: Conv2d::same(store, rng, "head.conv2", c, c, k, 1),
            norm2: Norm::new(store, "head.norm2", c),
            fc1: Linear::new(store, rng, "head.fc1", c, cfg.head_hidden),
            fc2: Linear::new(store, rng, "head.fc2", cfg.head_hidden, cfg.num_classes),
        }
    }

    pub fn build<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        trace: &mut Option<&mut ShapeTrace>,
    ) -> Result<Var, MavitError> {
        record(trace, "head.in", g.shape(x));
        let h = self.conv1.apply(g, x)?;
        let h = g.relu(h);
        let h = self.norm1.apply(g, h)?;
        record(trace, "head.conv1", g.shape(h));
        let h = self.conv2.apply(g, h)?;
        let h = self.norm2.apply(g, h)?;
        record(trace, "head.conv2", g.shape(h));
        let h = g.add(h, x)?;
        let pooled = g.mean_rows(h)?;
        record(trace, "head.pool", g.shape(pooled));
        let z = self.fc1.apply(g, pooled)?;
        let z = g.relu(z);
        record(trace, "head.fc1", g.shape(z));
        let logits = self.fc2.apply(g, z)?;
        record(trace, "head.logits", g.shape(logits));
        Ok(logits)
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_logits_are_uniform() {
        let p = softmax(&[3.0f64; 11]);
        assert!(p.iter().all(|&v| (v - 1.0 / 11.0).abs() < 1e-15));
        let p = softmax(&[1000.0f32, 0.0]);
        assert!(p[0] > 0.999 && p.iter().all(|v| v.is_finite()));
    }
}
