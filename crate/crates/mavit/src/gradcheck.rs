//! Central finite-difference gradient checking.
//!
//! Numeric gradients are computed from forward passes only, so they are an
//! independent check of the analytic backward pass.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::MavitError;
use crate::model::Mavit;
use crate::tensor::Tensor;

/// Gradients whose magnitude is below this floor are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checks: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.checks.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    /// Number of checked entries per top-level component (`vtm`, `fusion`, ...).
    pub fn per_component(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for c in &self.checks {
            let comp = c.name.split('.').next().unwrap_or("").to_string();
            *out.entry(comp).or_insert(0) += 1;
        }
        out
    }
}

/// Compares analytic and central-difference gradients of the mean batch loss
/// on at least `min_samples` parameter entries spread over every tensor.
pub fn check_model_gradients(
    model: &Mavit<f64>,
    batch: &[(Tensor<f64>, usize)],
    min_samples: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport, MavitError> {
    let refs: Vec<(&Tensor<f64>, usize)> = batch.iter().map(|(t, y)| (t, *y)).collect();
    let (_, analytic) = model.batch_loss_and_gradients(&refs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ntensors = model.params().len();
    let per_tensor = min_samples.div_ceil(ntensors).max(1);

    let mut probe = model.clone();
    let mut report = GradCheckReport::default();
    for pid in model.params().ids() {
        let len = model.params().get(pid).numel();
        let picks = sample(&mut rng, len, per_tensor.min(len));
        for idx in picks.iter() {
            let orig = model.params().get(pid).data()[idx];
            probe.params_mut().get_mut(pid).data_mut()[idx] = orig + eps;
            let plus = probe.loss(&refs)?;
            probe.params_mut().get_mut(pid).data_mut()[idx] = orig - eps;
            let minus = probe.loss(&refs)?;
            probe.params_mut().get_mut(pid).data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pid.index()].data()[idx];
            report.checks.push(ParamCheck {
                name: model.params().name(pid).to_string(),
                index: idx,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric),
            });
        }
    }
    Ok(report)
}
