use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::SlideError;
use crate::tiling::{Tile, TileGrid};

/// Tiles whose largest per-channel standard deviation is below this
/// (0-255 scale) count as blank.
pub const BLANK_STD_THRESHOLD: f64 = 5.0;
pub const MAX_PAD_FRACTION: f64 = 0.5;

pub fn is_blank(tile: &Tile) -> bool {
    tile.pad_fraction > MAX_PAD_FRACTION || tile.pixel_std() < BLANK_STD_THRESHOLD
}

/// Draws `min(k, eligible)` distinct tiles uniformly at random.
pub fn sample_patches(grid: &TileGrid, k: usize, seed: u64, exclude_blank: bool) -> Result<Vec<Tile>, SlideError> {
    if k == 0 {
        return Err(SlideError::Invalid("k must be at least 1".into()));
    }
    let eligible: Vec<&Tile> = grid.tiles.iter().filter(|t| !exclude_blank || !is_blank(t)).collect();
    if eligible.is_empty() {
        return Err(SlideError::EmptySelection);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, eligible.len(), k.min(eligible.len()));
    Ok(picks.iter().map(|i| eligible[i].clone()).collect())
}
