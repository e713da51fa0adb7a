//! D-Graph: one point per cohort sample. The sign of `x` encodes modality
//! (surgical right, biopsy left), the sign of `y` encodes correctness
//! (correct above the axis), `|y|` and the radius scale with tile count.
//!
//! With `N` samples and `I_max` the largest tile count,
//! `x = ±x_max * i / N` where `i` is the 1-based rank of the sample within its
//! modality ordered by sample id, and `y = ±y_max * I / I_max`.

use std::collections::HashSet;
use std::fmt::Write;

use histocad_core::Modality;
use serde::{Deserialize, Serialize};

use crate::error::VisioError;

/// Radius of the largest sample in layout units.
pub const DEFAULT_MAX_RADIUS: f64 = 0.04;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSample {
    pub sample_id: String,
    pub modality: Modality,
    pub correct: bool,
    pub tile_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DGraphPoint {
    pub sample_id: String,
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub modality: Modality,
    pub correct: bool,
    pub tile_count: u32,
}

/// Points are returned in input order.
pub fn dgraph_layout(samples: &[CohortSample], x_max: f64, y_max: f64) -> Result<Vec<DGraphPoint>, VisioError> {
    if samples.is_empty() {
        return Err(VisioError::Validation("cohort is empty".into()));
    }
    if !(x_max > 0.0 && y_max > 0.0) {
        return Err(VisioError::Validation("axis extents must be positive".into()));
    }
    let mut ids = HashSet::new();
    for s in samples {
        if s.tile_count == 0 {
            return Err(VisioError::Validation(format!("sample `{}` has no tiles", s.sample_id)));
        }
        if !ids.insert(s.sample_id.as_str()) {
            return Err(VisioError::Validation(format!("duplicate sample `{}`", s.sample_id)));
        }
    }
    let n = samples.len() as f64;
    let i_max = samples.iter().map(|s| s.tile_count).max().expect("non-empty") as f64;
    let rank = |s: &CohortSample| {
        1 + samples
            .iter()
            .filter(|o| o.modality == s.modality && o.sample_id < s.sample_id)
            .count()
    };
    Ok(samples
        .iter()
        .map(|s| {
            let sx = if s.modality == Modality::Surgical { 1.0 } else { -1.0 };
            let sy = if s.correct { 1.0 } else { -1.0 };
            let ratio = s.tile_count as f64 / i_max;
            DGraphPoint {
                sample_id: s.sample_id.clone(),
                x: sx * x_max * (rank(s) as f64 / n),
                y: sy * y_max * ratio,
                radius: DEFAULT_MAX_RADIUS * ratio,
                modality: s.modality,
                correct: s.correct,
                tile_count: s.tile_count,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvgOptions {
    pub width: u32,
    pub height: u32,
    pub x_max: f64,
    pub y_max: f64,
    pub x_label: String,
    pub y_label: String,
}

impl Default for SvgOptions {
    fn default() -> Self {
        Self {
            width: 640,
            height: 640,
            x_max: 1.0,
            y_max: 1.0,
            x_label: "Biopsy \u{2190} modality \u{2192} Surgical".into(),
            y_label: "Incorrect \u{2190} prediction \u{2192} Correct".into(),
        }
    }
}

const MARGIN: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Maps layout coordinates to SVG pixels (y grows downwards).
pub fn to_pixels(x: f64, y: f64, opts: &SvgOptions) -> (f64, f64) {
    let (w, h) = (opts.width as f64, opts.height as f64);
    let half_w = w / 2.0 - MARGIN;
    let half_h = h / 2.0 - MARGIN;
    (w / 2.0 + x / opts.x_max * half_w, h / 2.0 - y / opts.y_max * half_h)
}

pub fn dgraph_svg(points: &[DGraphPoint], opts: &SvgOptions) -> String {
    let (w, h) = (opts.width as f64, opts.height as f64);
    let (cx, cy) = (w / 2.0, h / 2.0);
    let half_w = w / 2.0 - MARGIN;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        opts.width, opts.height, opts.width, opts.height
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(
        s,
        r##"<g class="axes" stroke="#444444" stroke-width="1"><line x1="{MARGIN}" y1="{cy}" x2="{}" y2="{cy}"/><line x1="{cx}" y1="{MARGIN}" x2="{cx}" y2="{}"/></g>"##,
        w - MARGIN,
        h - MARGIN
    );
    let quadrants = [
        (MARGIN + 4.0, MARGIN - 8.0, "start", "Correct / Biopsy"),
        (w - MARGIN - 4.0, MARGIN - 8.0, "end", "Correct / Surgical"),
        (MARGIN + 4.0, h - MARGIN + 18.0, "start", "Incorrect / Biopsy"),
        (w - MARGIN - 4.0, h - MARGIN + 18.0, "end", "Incorrect / Surgical"),
    ];
    for (x, y, anchor, text) in quadrants {
        let _ = writeln!(
            s,
            r#"<text class="quadrant" x="{x}" y="{y}" text-anchor="{anchor}" font-family="sans-serif" font-size="12">{text}</text>"#
        );
    }
    let _ = writeln!(
        s,
        r#"<text class="axis-label" x="{cx}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
        h - 8.0,
        escape(&opts.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text class="axis-label" x="14" y="{cy}" text-anchor="middle" font-family="sans-serif" font-size="11" transform="rotate(-90 14 {cy})">{}</text>"#,
        escape(&opts.y_label)
    );
    let _ = writeln!(s, r#"<g class="samples">"#);
    for p in points {
        let (px, py) = to_pixels(p.x, p.y, opts);
        let r = (p.radius / opts.x_max * half_w).max(2.0);
        let fill = if p.correct { "#0072b2" } else { "#d55e00" };
        let _ = writeln!(
            s,
            r#"<circle cx="{px:.3}" cy="{py:.3}" r="{r:.3}" fill="{fill}" fill-opacity="0.7" data-sample="{id}"><title>{id} ({modality:?}, {tiles} tiles, {verdict})</title></circle>"#,
            id = escape(&p.sample_id),
            modality = p.modality,
            tiles = p.tile_count,
            verdict = if p.correct { "correct" } else { "incorrect" },
        );
    }
    let _ = writeln!(s, "</g>\n</svg>");
    s
}

/// CSV with one row per point:
/// `sample_id,x,y,radius,modality,correct,tile_count`.
pub fn layout_csv(points: &[DGraphPoint]) -> Result<String, VisioError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p)?;
    }
    let bytes = w.into_inner().map_err(|e| VisioError::Validation(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| VisioError::Validation(e.to_string()))
}
