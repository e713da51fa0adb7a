//! Slide sources: a single raster file or a directory of pre-cut tiles named
//! `r<row>_c<col>.png`.

use std::fs;
use std::path::Path;

use image::{GenericImage, RgbImage};

use crate::error::SlideError;
use crate::manifest::SlideManifest;
use crate::tiling::TileGrid;

fn ingestion(path: &Path, reason: impl ToString) -> SlideError {
    SlideError::Ingestion { path: path.to_path_buf(), reason: reason.to_string() }
}

/// Parses `r<row>_c<col>.png`.
pub fn parse_tile_name(name: &str) -> Option<(u32, u32)> {
    let stem = name.strip_suffix(".png")?;
    let (r, c) = stem.strip_prefix('r')?.split_once("_c")?;
    Some((r.parse().ok()?, c.parse().ok()?))
}

pub fn tile_file_name(row: u32, col: u32) -> String {
    format!("r{row}_c{col}.png")
}

/// Reads every `r<row>_c<col>.png` in `dir`, sorted row-major.
pub fn read_tile_dir(dir: &Path) -> Result<Vec<(u32, u32, RgbImage)>, SlideError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| ingestion(dir, e))? {
        let path = entry?.path();
        let Some((row, col)) = path.file_name().and_then(|n| n.to_str()).and_then(parse_tile_name) else {
            continue;
        };
        let img = image::open(&path).map_err(|e| ingestion(&path, e))?.to_rgb8();
        out.push((row, col, img));
    }
    if out.is_empty() {
        return Err(ingestion(dir, "no r<row>_c<col>.png tiles found"));
    }
    out.sort_by_key(|(r, c, _)| (*r, *c));
    Ok(out)
}

/// Writes each tile of `grid` as `dir/r<row>_c<col>.png`.
pub fn write_tile_dir(grid: &TileGrid, dir: &Path) -> Result<(), SlideError> {
    fs::create_dir_all(dir)?;
    for t in &grid.tiles {
        let path = dir.join(tile_file_name(t.grid_row, t.grid_col));
        t.to_image().save(&path).map_err(|e| ingestion(&path, e))?;
    }
    Ok(())
}

/// Places tiles on a canvas of `width x height`; the tile pitch is the size of
/// the first tile and anything beyond the canvas is cropped.
pub fn assemble_tiles(tiles: &[(u32, u32, RgbImage)], width: u32, height: u32) -> Result<RgbImage, SlideError> {
    let pitch = tiles.first().map(|(_, _, t)| t.width()).unwrap_or(0);
    if pitch == 0 {
        return Err(SlideError::Invalid("empty tile set".into()));
    }
    let mut canvas = RgbImage::new(width, height);
    for (row, col, tile) in tiles {
        let (x, y) = (col * pitch, row * pitch);
        if x >= width || y >= height {
            continue;
        }
        let w = tile.width().min(width - x);
        let h = tile.height().min(height - y);
        let view = image::imageops::crop_imm(tile, 0, 0, w, h);
        canvas
            .copy_from(&*view, x, y)
            .map_err(|e| SlideError::Invalid(e.to_string()))?;
    }
    Ok(canvas)
}

/// Loads the full slide as an RGB raster and checks it against the manifest size.
pub fn load_source(slide: &SlideManifest) -> Result<RgbImage, SlideError> {
    load_raster(&slide.tile_source, slide.width_px, slide.height_px)
}

/// Loads a raster file or tile directory that must measure `width x height`.
pub fn load_raster(path: &Path, width: u32, height: u32) -> Result<RgbImage, SlideError> {
    let image = if path.is_dir() {
        assemble_tiles(&read_tile_dir(path)?, width, height)?
    } else {
        image::open(path).map_err(|e| ingestion(path, e))?.to_rgb8()
    };
    if image.width() != width || image.height() != height {
        return Err(ingestion(
            path,
            format!("raster is {}x{}, manifest says {width}x{height}", image.width(), image.height()),
        ));
    }
    Ok(image)
}
