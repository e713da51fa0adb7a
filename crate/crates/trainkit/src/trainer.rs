use std::path::Path;
use std::time::Instant;

use histocad_core::Scalar;
use histocad_mavit::{patch_from_rgb8, Mavit, MavitError, Tensor};
use histocad_slidekit::{DatasetSplit, Partition};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::augment;
use crate::config::TrainConfig;
use crate::dataset::{Sample, Splits};
use crate::error::{CheckpointBytes, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience counter over validation losses.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self { patience, min_delta, best: f64::INFINITY, wait: 0 }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, val_loss: f64) -> StopDecision {
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.wait = 0;
            StopDecision::Improved
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Wall time of the training pass divided by the patches it saw.
    pub seconds_per_patch: f64,
}

#[derive(Clone)]
pub struct TrainOutcome<T: Scalar> {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Mavit<T>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub curve: Vec<EpochStats>,
    pub stopped_early: bool,
}

/// 64-bit mix (splitmix64 finalizer) for deriving per-sample seeds.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Refuses any sample whose patient is not in the training partition.
pub fn check_batch(batch: &[&Sample], split: &DatasetSplit) -> Result<(), TrainError> {
    for s in batch {
        match split.partition_of(&s.patient_id) {
            Some(Partition::Train) => {}
            other => return Err(TrainError::Leakage { patient: s.patient_id.clone(), partition: other }),
        }
    }
    Ok(())
}

pub fn to_tensor<T: Scalar>(patch: &image::RgbImage) -> Result<Tensor<T>, MavitError> {
    if patch.width() != patch.height() {
        return Err(MavitError::Shape(format!("patch is {}x{}, expected square", patch.width(), patch.height())));
    }
    patch_from_rgb8(patch.as_raw(), patch.width() as usize)
}

fn is_divergence(e: &MavitError) -> bool {
    matches!(e, MavitError::NonFinite(_))
}

/// Mean cross-entropy and accuracy of `samples` without augmentation.
pub fn evaluate_loss<T: Scalar>(model: &Mavit<T>, samples: &[Sample]) -> Result<(f64, f64), MavitError> {
    let per: Vec<(f64, bool)> = samples
        .par_iter()
        .map(|s| {
            let probs = model.forward(&to_tensor(&s.patch)?)?;
            let p: Vec<f64> = probs.iter().map(|v| v.as_f64()).collect();
            let target = s.label.index();
            let loss = -p[target].max(f64::MIN_POSITIVE).ln();
            let correct = histocad_core::ClassLabel::argmax(&p) == Some(target);
            Ok((loss, correct))
        })
        .collect::<Result<_, MavitError>>()?;
    let n = per.len().max(1) as f64;
    Ok((
        per.iter().map(|p| p.0).sum::<f64>() / n,
        per.iter().filter(|p| p.1).count() as f64 / n,
    ))
}

struct Sgd<T> {
    velocity: Vec<Tensor<T>>,
    lr: T,
    momentum: T,
}

impl<T: Scalar> Sgd<T> {
    /// `v = momentum * v + g; w -= lr * v`.
    fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) {
        for ((w, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grads) {
            for ((w, v), &g) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *v = self.momentum * *v + g;
                *w -= self.lr * *v;
            }
        }
    }
}

/// Mean loss and gradient of a batch. Per-sample gradients are computed in
/// parallel and summed in batch order, so results do not depend on scheduling.
fn batch_gradients<T: Scalar>(
    model: &Mavit<T>,
    batch: &[&Sample],
    cfg: &TrainConfig,
    epoch: usize,
    offset: usize,
) -> Result<(T, Vec<Tensor<T>>), MavitError> {
    let per: Vec<(T, Vec<Tensor<T>>)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let seed = mix_seed(cfg.seed, epoch as u64, (offset + i) as u64);
            let patch = augment(&s.patch, seed, cfg.augmentation);
            model.loss_and_gradients(&to_tensor(&patch)?, s.label.index())
        })
        .collect::<Result<_, _>>()?;
    let mut iter = per.into_iter();
    let (mut loss, mut acc) = iter.next().ok_or_else(|| MavitError::Shape("empty batch".into()))?;
    for (l, grads) in iter {
        loss += l;
        for (a, g) in acc.iter_mut().zip(&grads) {
            for (x, &y) in a.data_mut().iter_mut().zip(g.data()) {
                *x += y;
            }
        }
    }
    let inv = T::one() / T::from_count(batch.len());
    for a in &mut acc {
        for x in a.data_mut() {
            *x *= inv;
        }
    }
    Ok((loss * inv, acc))
}

/// Minibatch SGD with momentum and early stopping on validation loss.
pub fn train<T: Scalar>(mut model: Mavit<T>, cfg: &TrainConfig, data: &Splits) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if data.val.is_empty() {
        return Err(TrainError::EmptySplit("val"));
    }
    if data.train.classes != model.classes() {
        return Err(TrainError::Compatibility(format!("{:?}", data.train.classes)));
    }

    let mut sgd = Sgd {
        velocity: model.params().zeros_like(),
        lr: T::cast(cfg.learning_rate),
        momentum: T::cast(cfg.momentum),
    };
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut best_params = model.params().tensors().to_vec();
    let mut best_epoch = 0;
    let mut curve = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    let diverged = |epoch: usize, best: &[Tensor<T>], model: &Mavit<T>| -> TrainError {
        let mut good = model.clone();
        match good.load_parameters(best).and_then(|_| good.to_checkpoint_bytes()) {
            Ok(bytes) => TrainError::Divergence { epoch, last_good: CheckpointBytes(bytes.into_boxed_slice()) },
            Err(e) => e.into(),
        }
    };

    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64, u64::MAX));
        order.shuffle(&mut rng);
        let started = Instant::now();
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data.train.samples[i]).collect();
            check_batch(&batch, &data.split)?;
            let (loss, grads) = match batch_gradients(&model, &batch, cfg, epoch, b * cfg.batch_size) {
                Ok(r) => r,
                Err(e) if is_divergence(&e) => return Err(diverged(epoch, &best_params, &model)),
                Err(e) => return Err(e.into()),
            };
            let finite = loss.is_finite() && grads.iter().all(|g| g.is_finite());
            if !finite {
                return Err(diverged(epoch, &best_params, &model));
            }
            loss_sum += loss.as_f64() * batch.len() as f64;
            sgd.step(model.params_mut().tensors_mut(), &grads);
        }
        let seconds_per_patch = started.elapsed().as_secs_f64() / data.train.len() as f64;
        let train_loss = loss_sum / data.train.len() as f64;

        let (val_loss, val_accuracy) = match evaluate_loss(&model, &data.val.samples) {
            Ok(r) if r.0.is_finite() => r,
            Ok(_) => return Err(diverged(epoch, &best_params, &model)),
            Err(e) if is_divergence(&e) => return Err(diverged(epoch, &best_params, &model)),
            Err(e) => return Err(e.into()),
        };
        log::info!("epoch {epoch}: train {train_loss:.4} val {val_loss:.4} acc {val_accuracy:.3}");
        curve.push(EpochStats { epoch, train_loss, val_loss, val_accuracy, seconds_per_patch });

        match stopper.observe(val_loss) {
            StopDecision::Improved => {
                best_params.clone_from_slice(model.params().tensors());
                best_epoch = epoch;
            }
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }

    model.load_parameters(&best_params)?;
    Ok(TrainOutcome { model, best_epoch, best_val_loss: stopper.best(), curve, stopped_early })
}

pub fn write_curve(curve: &[EpochStats], path: &Path) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss", "seconds_per_patch"])?;
    for e in curve {
        w.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.val_loss.to_string(),
            e.seconds_per_patch.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
