use std::fs;
use std::path::Path;
use std::time::Instant;

use histocad_core::{LogMeta, PatchPrediction, PredictionLog, Scalar};
use histocad_mavit::{patch_from_rgb8, Mavit};
use histocad_slidekit::{tile_image, Roi, Tile};
use histocad_verdict::{diagnose_records, DiagnosisResult, Scope, VoteConfig};
use histocad_visio::{reconstruct, render_heatmap, render_labelmap, Colormap};
use image::imageops::{self, FilterType};
use rayon::prelude::*;

use crate::error::ServiceError;
use crate::jobs::StageTimings;
use crate::slides::{encode_png, SlideRecord};

pub struct AnalysisSettings {
    pub tile_size: u32,
    pub vote: VoteConfig,
    pub render_scale: u32,
    pub checkpoint_id: String,
}

#[derive(Debug, Clone)]
pub struct SlideAnalysis {
    pub records: Vec<PatchPrediction>,
    pub diagnosis: DiagnosisResult,
    pub rows: u32,
    pub cols: u32,
    pub timings: StageTimings,
}

fn predict_tile<T: Scalar>(model: &Mavit<T>, slide: &SlideRecord, tile: &Tile) -> Result<PatchPrediction, ServiceError> {
    let size = model.config().input_size as u32;
    let mut image = tile.to_image();
    if image.width() != size {
        image = imageops::resize(&image, size, size, FilterType::Triangle);
    }
    let probs = model.forward(&patch_from_rgb8(image.as_raw(), size as usize)?)?;
    let probs: Vec<f64> = probs.iter().map(|p| p.as_f64()).collect();
    PatchPrediction::from_probabilities(
        slide.slide_id.clone(),
        slide.patient_id.clone(),
        tile.grid_row as usize,
        tile.grid_col as usize,
        None,
        probs,
        tile.pad_fraction,
    )
    .map_err(|e| ServiceError::Internal(e.to_string()))
}

fn per(seconds: f64, n: usize) -> f64 {
    seconds / n.max(1) as f64
}

/// Tiles `roi`, classifies every tile, votes, and renders the label map,
/// heatmap and reconstruction into `out_dir`.
pub fn analyze<T: Scalar>(
    model: &Mavit<T>,
    slide: &SlideRecord,
    roi: Roi,
    settings: &AnalysisSettings,
    out_dir: &Path,
) -> Result<SlideAnalysis, ServiceError> {
    let started = Instant::now();
    roi.check_within(slide.width_px, slide.height_px)?;
    let image = slide.load_pixels()?;
    let grid = tile_image(&image, roi, settings.tile_size)?;
    drop(image);
    let tiling_s = started.elapsed().as_secs_f64();
    let n = grid.tiles.len();

    let t = Instant::now();
    let records: Vec<PatchPrediction> =
        grid.tiles.par_iter().map(|tile| predict_tile(model, slide, tile)).collect::<Result<_, _>>()?;
    let inference_s_per_patch = per(t.elapsed().as_secs_f64(), n);

    let diagnosis = diagnose_records(&records, &Scope::All, &settings.vote).map_err(|e| {
        ServiceError::Precondition(format!("{e}: every tile in the region is padded beyond the voting limit"))
    })?;

    let t = Instant::now();
    let reconstruction = reconstruct(&grid, true).map_err(render_error)?;
    fs::write(out_dir.join("reconstruction.png"), encode_png(&reconstruction)?)?;
    let reconstruction_s_per_tile = per(t.elapsed().as_secs_f64(), n);

    let t = Instant::now();
    let labelmap = render_labelmap(&grid, &records, settings.render_scale).map_err(render_error)?;
    fs::write(out_dir.join("labelmap.png"), encode_png(&labelmap.image)?)?;
    let labelmap_s_per_tile = per(t.elapsed().as_secs_f64(), n);

    let t = Instant::now();
    let heatmap = render_heatmap(&grid, &records, settings.render_scale, Colormap::Inferno).map_err(render_error)?;
    fs::write(out_dir.join("heatmap.png"), encode_png(&heatmap.image)?)?;
    let heatmap_s_per_tile = per(t.elapsed().as_secs_f64(), n);

    let log = PredictionLog {
        meta: LogMeta {
            checkpoint_id: settings.checkpoint_id.clone(),
            split: "service".into(),
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            seconds_per_patch: Some(inference_s_per_patch),
        },
        records,
    };
    log.save(&out_dir.join("predictions.jsonl")).map_err(|e| ServiceError::Internal(e.to_string()))?;
    let diagnosis_json = serde_json::to_vec_pretty(&diagnosis).map_err(|e| ServiceError::Internal(e.to_string()))?;
    fs::write(out_dir.join("diagnosis.json"), diagnosis_json)?;

    Ok(SlideAnalysis {
        records: log.records,
        diagnosis,
        rows: grid.rows,
        cols: grid.cols,
        timings: StageTimings {
            tiling_s,
            inference_s_per_patch,
            reconstruction_s_per_tile,
            labelmap_s_per_tile,
            heatmap_s_per_tile,
            total_s: started.elapsed().as_secs_f64(),
        },
    })
}

fn render_error(e: histocad_visio::VisioError) -> ServiceError {
    ServiceError::Internal(format!("rendering: {e}"))
}
