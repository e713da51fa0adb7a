use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::SlideError;
use crate::manifest::SlideManifest;
use crate::source::load_source;

pub const DEFAULT_TILE_SIZE: u32 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
}

impl Roi {
    pub fn new(x0: u32, y0: u32, width: u32, height: u32) -> Self {
        Self { x0, y0, width, height }
    }

    pub fn whole(slide: &SlideManifest) -> Self {
        Self::new(0, 0, slide.width_px, slide.height_px)
    }

    pub fn check_within(&self, width: u32, height: u32) -> Result<(), SlideError> {
        let fits = self.width > 0
            && self.height > 0
            && self.x0 as u64 + self.width as u64 <= width as u64
            && self.y0 as u64 + self.height as u64 <= height as u64;
        if fits {
            Ok(())
        } else {
            Err(SlideError::Bounds { region: format!("{self:?}"), width, height })
        }
    }
}

/// Placement of one grid cell in source coordinates; `width`/`height` are the
/// unpadded extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileBounds {
    pub grid_row: u32,
    pub grid_col: u32,
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
}

impl TileBounds {
    pub fn pad_fraction(&self, tile_size: u32) -> f64 {
        let full = tile_size as f64 * tile_size as f64;
        1.0 - (self.width as f64 * self.height as f64) / full
    }
}

/// Grid geometry without pixel data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub region: Roi,
    pub tile_size: u32,
    pub rows: u32,
    pub cols: u32,
}

impl GridLayout {
    pub fn new(region: Roi, tile_size: u32) -> Result<Self, SlideError> {
        if tile_size == 0 {
            return Err(SlideError::Invalid("tile size must be at least 1".into()));
        }
        if region.width == 0 || region.height == 0 {
            return Err(SlideError::Invalid("region must be non-empty".into()));
        }
        Ok(Self {
            region,
            tile_size,
            rows: region.height.div_ceil(tile_size),
            cols: region.width.div_ceil(tile_size),
        })
    }

    pub fn len(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major cell bounds.
    pub fn cells(&self) -> impl Iterator<Item = TileBounds> + '_ {
        let ts = self.tile_size;
        let r = self.region;
        (0..self.rows).flat_map(move |row| {
            (0..self.cols).map(move |col| {
                let dx = col * ts;
                let dy = row * ts;
                TileBounds {
                    grid_row: row,
                    grid_col: col,
                    x0: r.x0 + dx,
                    y0: r.y0 + dy,
                    width: ts.min(r.width - dx),
                    height: ts.min(r.height - dy),
                }
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub grid_row: u32,
    pub grid_col: u32,
    pub tile_size: u32,
    pub bounds: TileBounds,
    /// Interleaved RGB, `tile_size * tile_size * 3` bytes; padding is zero.
    pub pixels: Vec<u8>,
    pub pad_fraction: f64,
}

impl Tile {
    /// Largest per-channel standard deviation over the unpadded area (0-255 scale).
    pub fn pixel_std(&self) -> f64 {
        let ts = self.tile_size as usize;
        let (w, h) = (self.bounds.width as usize, self.bounds.height as usize);
        let n = (w * h) as f64;
        if n == 0.0 {
            return 0.0;
        }
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        for y in 0..h {
            for x in 0..w {
                let base = (y * ts + x) * 3;
                for c in 0..3 {
                    let v = self.pixels[base + c] as f64;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        (0..3)
            .map(|c| {
                let mean = sum[c] / n;
                (sq[c] / n - mean * mean).max(0.0).sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_raw(self.tile_size, self.tile_size, self.pixels.clone()).expect("tile buffer has tile_size^2*3 bytes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    pub region: Roi,
    pub tile_size: u32,
    pub rows: u32,
    pub cols: u32,
    /// Row-major.
    pub tiles: Vec<Tile>,
}

impl TileGrid {
    pub fn get(&self, row: u32, col: u32) -> Option<&Tile> {
        if row >= self.rows || col >= self.cols {
            return None;
        }
        self.tiles.get((row * self.cols + col) as usize)
    }
}

/// Cuts `region` of an in-memory image into zero-padded tiles.
pub fn tile_image(image: &RgbImage, region: Roi, tile_size: u32) -> Result<TileGrid, SlideError> {
    region.check_within(image.width(), image.height())?;
    let layout = GridLayout::new(region, tile_size)?;
    let ts = tile_size as usize;
    let stride = image.width() as usize * 3;
    let raw = image.as_raw();
    let tiles = layout
        .cells()
        .map(|b| {
            let mut pixels = vec![0u8; ts * ts * 3];
            let row_bytes = b.width as usize * 3;
            for y in 0..b.height as usize {
                let src = (b.y0 as usize + y) * stride + b.x0 as usize * 3;
                pixels[y * ts * 3..y * ts * 3 + row_bytes].copy_from_slice(&raw[src..src + row_bytes]);
            }
            Tile {
                grid_row: b.grid_row,
                grid_col: b.grid_col,
                tile_size,
                bounds: b,
                pixels,
                pad_fraction: b.pad_fraction(tile_size),
            }
        })
        .collect();
    Ok(TileGrid { region, tile_size, rows: layout.rows, cols: layout.cols, tiles })
}

/// Loads the slide source and tiles `region`.
pub fn tile_region(slide: &SlideManifest, region: Roi, tile_size: u32) -> Result<TileGrid, SlideError> {
    slide.validate()?;
    region.check_within(slide.width_px, slide.height_px)?;
    if tile_size == 0 {
        return Err(SlideError::Invalid("tile size must be at least 1".into()));
    }
    let image = load_source(slide)?;
    tile_image(&image, region, tile_size)
}
