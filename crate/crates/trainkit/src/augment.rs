use image::imageops;
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::AugmentFlags;

pub const JITTER_RANGE: (f64, f64) = (0.9, 1.1);

/// Random right-angle rotation, independent horizontal and vertical flips,
/// and brightness/contrast/saturation jitter. The random draws are the same
/// whatever the flags, so enabling one transform never changes another.
pub fn augment(patch: &RgbImage, seed: u64, flags: AugmentFlags) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let quarter_turns: u8 = rng.gen_range(0..4);
    let flip_h = rng.gen_bool(0.5);
    let flip_v = rng.gen_bool(0.5);
    let brightness = rng.gen_range(JITTER_RANGE.0..=JITTER_RANGE.1);
    let contrast = rng.gen_range(JITTER_RANGE.0..=JITTER_RANGE.1);
    let saturation = rng.gen_range(JITTER_RANGE.0..=JITTER_RANGE.1);

    let mut out = if flags.rot90s { rotate(patch, quarter_turns) } else { patch.clone() };
    if flags.flips {
        if flip_h {
            imageops::flip_horizontal_in_place(&mut out);
        }
        if flip_v {
            imageops::flip_vertical_in_place(&mut out);
        }
    }
    if flags.color_jitter {
        jitter(&mut out, brightness, contrast, saturation);
    }
    out
}

pub fn rotate(patch: &RgbImage, quarter_turns: u8) -> RgbImage {
    match quarter_turns % 4 {
        0 => patch.clone(),
        1 => imageops::rotate90(patch),
        2 => imageops::rotate180(patch),
        _ => imageops::rotate270(patch),
    }
}

fn luma(p: [f64; 3]) -> f64 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

/// Brightness scales values, contrast stretches around the mean luma,
/// saturation blends each pixel with its own luma.
pub fn jitter(img: &mut RgbImage, brightness: f64, contrast: f64, saturation: f64) {
    let n = (img.width() * img.height()).max(1) as f64;
    let mean = img.pixels().map(|p| luma(p.0.map(f64::from))).sum::<f64>() / n * brightness;
    for px in img.pixels_mut() {
        let v = px.0.map(|c| c as f64 * brightness);
        let v = v.map(|c| (c - mean) * contrast + mean);
        let g = luma(v);
        px.0 = v.map(|c| (g + (c - g) * saturation).round().clamp(0.0, 255.0) as u8);
    }
}
