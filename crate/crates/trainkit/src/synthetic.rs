//! Separable 11-class patch generator: every class has its own hue and
//! texture, each patient a small colour shift, each patch its own noise.

use histocad_core::{ClassLabel, NUM_CLASSES};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub patients_per_class: usize,
    pub patches_per_patient: usize,
    /// Amplitude of per-pixel uniform noise, in 8-bit levels.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { patients_per_class: 14, patches_per_patient: 25, noise: 24.0, seed: 0 }
    }
}

impl SyntheticSpec {
    pub fn patches_per_class(&self) -> usize {
        self.patients_per_class * self.patches_per_patient
    }
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Texture value in [0, 1] for pixel (x, y) of class `c`.
fn texture(c: usize, x: f64, y: f64, phase: f64) -> f64 {
    let f = 0.5 + 0.25 * (c % 3) as f64;
    match c % 4 {
        0 => 0.5 + 0.5 * (f * (x + y) + phase).sin(),
        1 => 0.5 + 0.5 * ((f * x + phase).sin() * (f * y).sin()),
        2 => (((x * f * 0.3 + phase).floor() + (y * f * 0.3).floor()) as i64).rem_euclid(2) as f64,
        _ => {
            let r = ((x - 8.0).powi(2) + (y - 8.0).powi(2)).sqrt();
            0.5 + 0.5 * (f * r + phase).cos()
        }
    }
}

pub fn synthetic_patch(label: ClassLabel, patient_shift: f64, size: u32, noise: f64, rng: &mut ChaCha8Rng) -> RgbImage {
    let c = label.index();
    let hue = c as f64 / NUM_CLASSES as f64 + patient_shift;
    let value = 0.55 + 0.35 * ((c * 7) % 5) as f64 / 4.0;
    let dark = hsv_to_rgb(hue, 0.85, value * 0.55);
    let light = hsv_to_rgb(hue, 0.45, value);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let ox = rng.gen_range(0.0..16.0);
    let oy = rng.gen_range(0.0..16.0);
    RgbImage::from_fn(size, size, |x, y| {
        let t = texture(c, x as f64 + ox, y as f64 + oy, phase);
        let px: [u8; 3] = std::array::from_fn(|k| {
            let v = (dark[k] + (light[k] - dark[k]) * t) * 255.0 + rng.gen_range(-noise..=noise);
            v.round().clamp(0.0, 255.0) as u8
        });
        Rgb(px)
    })
}

pub fn synthetic_samples(spec: &SyntheticSpec, size: u32) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cols = (spec.patches_per_patient as f64).sqrt().ceil().max(1.0) as usize;
    let mut out = Vec::with_capacity(NUM_CLASSES * spec.patches_per_class());
    for label in ClassLabel::ALL {
        for p in 0..spec.patients_per_class {
            let patient_id = format!("syn-{:02}-{p:03}", label.index());
            let shift = rng.gen_range(-0.012..0.012);
            for i in 0..spec.patches_per_patient {
                out.push(Sample {
                    slide_id: format!("{patient_id}-s0"),
                    patient_id: patient_id.clone(),
                    grid_row: i / cols,
                    grid_col: i % cols,
                    label,
                    patch: synthetic_patch(label, shift, size, spec.noise, &mut rng),
                });
            }
        }
    }
    out
}
