use std::path::Path;

use histocad_core::{ClassLabel, PatchPrediction};
use histocad_slidekit::{GridLayout, TileGrid};
use image::{Rgb, RgbImage};

use crate::error::VisioError;
use crate::palette::{class_color, probability_intensity, Colormap};

/// Anything with a row/column grid shape.
pub trait GridShape {
    fn grid_rows(&self) -> usize;
    fn grid_cols(&self) -> usize;
}

impl GridShape for TileGrid {
    fn grid_rows(&self) -> usize {
        self.rows as usize
    }
    fn grid_cols(&self) -> usize {
        self.cols as usize
    }
}

impl GridShape for GridLayout {
    fn grid_rows(&self) -> usize {
        self.rows as usize
    }
    fn grid_cols(&self) -> usize {
        self.cols as usize
    }
}

impl GridShape for (usize, usize) {
    fn grid_rows(&self) -> usize {
        self.0
    }
    fn grid_cols(&self) -> usize {
        self.1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Legend {
    Classes(Vec<(String, [u8; 3])>),
    /// Intensity `round(255 p)` of the top-class probability.
    Probability(Colormap),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedMap {
    pub image: RgbImage,
    pub rows: usize,
    pub cols: usize,
    /// Pixels per cell edge.
    pub scale: u32,
    pub legend: Legend,
}

impl RenderedMap {
    pub fn cell_color(&self, row: usize, col: usize) -> [u8; 3] {
        self.image.get_pixel(col as u32 * self.scale, row as u32 * self.scale).0
    }

    pub fn save_png(&self, path: &Path) -> Result<(), VisioError> {
        self.image.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

/// Row-major record per cell; every cell must have exactly one record.
pub fn cell_records<'a>(
    grid: &impl GridShape,
    records: impl IntoIterator<Item = &'a PatchPrediction>,
) -> Result<Vec<&'a PatchPrediction>, VisioError> {
    let (rows, cols) = (grid.grid_rows(), grid.grid_cols());
    let mut cells: Vec<Option<&PatchPrediction>> = vec![None; rows * cols];
    for r in records {
        if r.grid_row >= rows || r.grid_col >= cols {
            return Err(VisioError::OutOfGrid { row: r.grid_row, col: r.grid_col, rows, cols });
        }
        let slot = &mut cells[r.grid_row * cols + r.grid_col];
        if slot.is_some() {
            return Err(VisioError::DuplicateCell(r.grid_row, r.grid_col));
        }
        *slot = Some(r);
    }
    let missing: Vec<(usize, usize)> =
        (0..rows * cols).filter(|&i| cells[i].is_none()).map(|i| (i / cols, i % cols)).collect();
    if !missing.is_empty() {
        return Err(VisioError::MissingCells(missing));
    }
    Ok(cells.into_iter().map(|c| c.expect("checked")).collect())
}

fn paint(rows: usize, cols: usize, scale: u32, color: impl Fn(usize) -> [u8; 3]) -> Result<RgbImage, VisioError> {
    if scale == 0 {
        return Err(VisioError::Validation("scale must be at least 1".into()));
    }
    let mut img = RgbImage::new(cols as u32 * scale, rows as u32 * scale);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (r, c) = ((y / scale) as usize, (x / scale) as usize);
        *px = Rgb(color(r * cols + c));
    }
    Ok(img)
}

pub fn render_labelmap<'a>(
    grid: &impl GridShape,
    records: impl IntoIterator<Item = &'a PatchPrediction>,
    scale: u32,
) -> Result<RenderedMap, VisioError> {
    let cells = cell_records(grid, records)?;
    let (rows, cols) = (grid.grid_rows(), grid.grid_cols());
    let image = paint(rows, cols, scale, |i| class_color(cells[i].predicted_label))?;
    let legend = Legend::Classes(ClassLabel::ALL.iter().map(|c| (c.name().to_string(), class_color(*c))).collect());
    Ok(RenderedMap { image, rows, cols, scale, legend })
}

pub fn render_heatmap<'a>(
    grid: &impl GridShape,
    records: impl IntoIterator<Item = &'a PatchPrediction>,
    scale: u32,
    colormap: Colormap,
) -> Result<RenderedMap, VisioError> {
    let cells = cell_records(grid, records)?;
    let (rows, cols) = (grid.grid_rows(), grid.grid_cols());
    let image = paint(rows, cols, scale, |i| colormap.color(probability_intensity(cells[i].confidence())))?;
    Ok(RenderedMap { image, rows, cols, scale, legend: Legend::Probability(colormap) })
}

/// Places every tile at `(row * ts, col * ts)`; with `crop` the padding
/// beyond the source region is removed.
pub fn reconstruct(grid: &TileGrid, crop: bool) -> Result<RgbImage, VisioError> {
    let (rows, cols) = (grid.rows as usize, grid.cols as usize);
    let ts = grid.tile_size;
    let mut seen = vec![false; rows * cols];
    let mut canvas = RgbImage::new(cols as u32 * ts, rows as u32 * ts);
    for t in &grid.tiles {
        let (r, c) = (t.grid_row as usize, t.grid_col as usize);
        if r >= rows || c >= cols {
            return Err(VisioError::OutOfGrid { row: r, col: c, rows, cols });
        }
        if std::mem::replace(&mut seen[r * cols + c], true) {
            return Err(VisioError::DuplicateCell(r, c));
        }
        let tile = RgbImage::from_raw(ts, ts, t.pixels.clone())
            .ok_or_else(|| VisioError::Validation(format!("tile ({r}, {c}) has a malformed buffer")))?;
        image::imageops::replace(&mut canvas, &tile, (c as u32 * ts) as i64, (r as u32 * ts) as i64);
    }
    let missing: Vec<(usize, usize)> =
        (0..rows * cols).filter(|&i| !seen[i]).map(|i| (i / cols, i % cols)).collect();
    if !missing.is_empty() {
        return Err(VisioError::MissingCells(missing));
    }
    if crop {
        canvas = image::imageops::crop_imm(&canvas, 0, 0, grid.region.width, grid.region.height).to_image();
    }
    Ok(canvas)
}
