use std::collections::HashSet;

use histocad_slidekit::*;
use image::{Rgb, RgbImage};
use proptest::prelude::*;

fn grid(cols: u32, rows: u32, ts: u32) -> TileGrid {
    let img = RgbImage::from_fn(cols * ts, rows * ts, |x, y| {
        let v = (x.wrapping_mul(7919) ^ y.wrapping_mul(104729)) as u8;
        Rgb([v, v / 2, 255 - v])
    });
    tile_image(&img, Roi::new(0, 0, cols * ts, rows * ts), ts).unwrap()
}

fn coords(tiles: &[Tile]) -> Vec<(u32, u32)> {
    tiles.iter().map(|t| (t.grid_row, t.grid_col)).collect()
}

#[test]
fn hundred_of_840_are_distinct_and_seeded() {
    let g = grid(35, 24, 4);
    assert_eq!(g.tiles.len(), 840);
    let a = sample_patches(&g, 100, 42, true).unwrap();
    assert_eq!(a.len(), 100);
    assert_eq!(coords(&a).into_iter().collect::<HashSet<_>>().len(), 100);
    let b = sample_patches(&g, 100, 42, true).unwrap();
    assert_eq!(coords(&a), coords(&b));
    let c = sample_patches(&g, 100, 43, true).unwrap();
    assert_ne!(coords(&a), coords(&c));
}

#[test]
fn undersized_grid_returns_everything() {
    let g = grid(8, 5, 4);
    let all = sample_patches(&g, 100, 1, false).unwrap();
    assert_eq!(all.len(), 40);
    assert_eq!(coords(&all).into_iter().collect::<HashSet<_>>().len(), 40);
}

#[test]
fn blank_and_mostly_padded_tiles_are_excluded() {
    let mut img = RgbImage::from_pixel(40, 16, Rgb([230, 230, 230]));
    for y in 0..16 {
        for x in 0..16 {
            img.put_pixel(x, y, Rgb([(x * 15) as u8, (y * 15) as u8, 100]));
        }
    }
    // Columns: textured tile, flat tile, and a 8-pixel sliver (pad 0.5 exactly) then nothing.
    let g = tile_image(&img, Roi::new(0, 0, 40, 16), 16).unwrap();
    assert_eq!(g.tiles.len(), 3);
    assert!(!is_blank(&g.tiles[0]));
    assert!(is_blank(&g.tiles[1]));
    let picked = sample_patches(&g, 10, 0, true).unwrap();
    assert_eq!(coords(&picked), vec![(0, 0)]);

    let flat = RgbImage::from_pixel(32, 32, Rgb([255, 255, 255]));
    let g = tile_image(&flat, Roi::new(0, 0, 32, 32), 16).unwrap();
    assert!(matches!(sample_patches(&g, 5, 0, true), Err(SlideError::EmptySelection)));
    assert!(sample_patches(&g, 0, 0, false).is_err());
}

proptest! {
    #[test]
    fn sampling_is_deterministic_without_duplicates(k in 1usize..60, seed in any::<u64>()) {
        let g = grid(7, 6, 2);
        let a = sample_patches(&g, k, seed, false).unwrap();
        let b = sample_patches(&g, k, seed, false).unwrap();
        prop_assert_eq!(coords(&a), coords(&b));
        prop_assert_eq!(a.len(), k.min(42));
        prop_assert_eq!(coords(&a).into_iter().collect::<HashSet<_>>().len(), a.len());
    }
}
