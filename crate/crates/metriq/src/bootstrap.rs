use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::MetricError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub n_resamples: usize,
    pub level: f64,
    pub seed: u64,
    /// Clamp the interval to `[0, 1]` (for proportions).
    pub unit_interval: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { n_resamples: 1000, level: 0.95, seed: 0, unit_interval: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub n_resamples: usize,
    /// Set when the interval could not be estimated from more than one unit
    /// or no resample produced a finite value.
    pub degenerate: bool,
}

impl ConfidenceInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap over resampled units. Resample `i` draws from its own
/// generator (stream `i` of the seeded ChaCha8), so the result does not depend
/// on thread scheduling. The interval is widened if needed to contain the
/// point estimate.
pub fn bootstrap_ci<U, F>(units: &[U], metric: F, cfg: &BootstrapConfig) -> Result<ConfidenceInterval, MetricError>
where
    U: Sync,
    F: Fn(&[&U]) -> f64 + Sync,
{
    if units.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) || cfg.n_resamples == 0 {
        return Err(MetricError::Validation("level must be in (0, 1) and n_resamples positive".into()));
    }
    let all: Vec<&U> = units.iter().collect();
    let point = metric(&all);
    let clamp = |v: f64| if cfg.unit_interval { v.clamp(0.0, 1.0) } else { v };
    if units.len() == 1 {
        log::warn!("bootstrap over a single unit gives a degenerate interval");
        return Ok(ConfidenceInterval {
            point,
            lower: clamp(point),
            upper: clamp(point),
            level: cfg.level,
            n_resamples: cfg.n_resamples,
            degenerate: true,
        });
    }
    let mut stats: Vec<f64> = (0..cfg.n_resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let sample: Vec<&U> = (0..units.len()).map(|_| &units[rng.gen_range(0..units.len())]).collect();
            metric(&sample)
        })
        .filter(|v| v.is_finite())
        .collect();
    if stats.is_empty() {
        return Ok(ConfidenceInterval {
            point,
            lower: clamp(point),
            upper: clamp(point),
            level: cfg.level,
            n_resamples: cfg.n_resamples,
            degenerate: true,
        });
    }
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - cfg.level) / 2.0;
    let lower = clamp(quantile(&stats, alpha).min(point));
    let upper = clamp(quantile(&stats, 1.0 - alpha).max(point));
    Ok(ConfidenceInterval { point, lower, upper, level: cfg.level, n_resamples: cfg.n_resamples, degenerate: false })
}
