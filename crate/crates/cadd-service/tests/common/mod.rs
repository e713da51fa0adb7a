#![allow(dead_code)]

pub mod conformance;

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::http::{HeaderMap, Request, StatusCode};
use axum::Router;
use cadd_service::{AnalysisJob, JobStatus, Service, ServiceConfig, SlidePayload, SlideRecord, UploadManifest};
use histocad_core::{ClassLabel, Modality};
use histocad_mavit::{Mavit, ModelConfig};
use http_body_util::BodyExt;
use image::{ImageFormat, RgbImage};
use tempfile::TempDir;
use tower::ServiceExt;

pub const TILE: u32 = 16;
pub const JOB_TIMEOUT: Duration = Duration::from_secs(120);

/// A data directory plus a micro-model checkpoint.
pub struct Fixture {
    pub dir: TempDir,
    pub config: ServiceConfig,
}

impl Fixture {
    pub fn new(workers: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let checkpoint = dir.path().join("model.ckpt");
        Mavit::<f32>::new(ModelConfig::micro(), 7).unwrap().save(&checkpoint).unwrap();
        let config = ServiceConfig {
            data_dir: dir.path().join("data"),
            checkpoint,
            workers,
            tile_size: TILE,
            render_scale: 2,
            ..ServiceConfig::default()
        };
        Self { dir, config }
    }

    pub fn start(&self) -> Arc<Service> {
        Arc::new(Service::start(self.config.clone()).unwrap())
    }

    pub fn data(&self) -> &Path {
        &self.config.data_dir
    }
}

/// Smooth colour gradients with a per-seed phase, so tiles differ.
pub fn raster(width: u32, height: u32, seed: u32) -> RgbImage {
    RgbImage::from_fn(width, height, |x, y| {
        let s = seed.wrapping_mul(37);
        image::Rgb([
            ((x * 7 + s) % 256) as u8,
            ((y * 11 + s * 3) % 256) as u8,
            ((x * y + s * 5) % 256) as u8,
        ])
    })
}

pub fn png(image: &RgbImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    image.write_to(&mut out, ImageFormat::Png).unwrap();
    out.into_inner()
}

pub fn manifest(id: &str, width: u32, height: u32, modality: Modality, label: Option<ClassLabel>) -> UploadManifest {
    UploadManifest {
        slide_id: id.into(),
        patient_id: format!("patient-{id}"),
        class_label: label,
        modality,
        width_px: width,
        height_px: height,
    }
}

pub fn add_slide(svc: &Service, id: &str, width: u32, height: u32, modality: Modality, seed: u32) -> SlideRecord {
    let bytes = png(&raster(width, height, seed));
    svc.slides()
        .create(manifest(id, width, height, modality, None), SlidePayload::Raster { bytes })
        .unwrap()
}

pub fn wait_done(svc: &Service, job_id: &str) -> AnalysisJob {
    let job = svc.wait_for(job_id, JOB_TIMEOUT).expect("job exists");
    assert!(job.status.is_terminal(), "job {job_id} still {:?}", job.status);
    job
}

pub fn wait_status(svc: &Service, job_id: &str, status: JobStatus) -> AnalysisJob {
    let job = wait_done(svc, job_id);
    assert_eq!(job.status, status, "job {job_id}: {:?}", job.failure);
    job
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Bytes,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }

    pub fn text(&self) -> String {
        String::from_utf8(self.body.to_vec()).unwrap()
    }

    pub fn content_type(&self) -> &str {
        self.headers.get("content-type").and_then(|v| v.to_str().ok()).unwrap_or("")
    }
}

pub async fn send(app: &Router, req: Request<Body>) -> Reply {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let body = res.into_body().collect().await.unwrap().to_bytes();
    Reply { status, headers, body }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn post_json(app: &Router, uri: &str, body: &serde_json::Value) -> Reply {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    send(app, req).await
}

pub const BOUNDARY: &str = "cadd-test-boundary";

/// Builds a `multipart/form-data` body from `(name, bytes)` parts.
pub fn multipart(parts: &[(&str, Vec<u8>)]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, bytes) in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        body.extend_from_slice(
            format!("Content-Disposition: form-data; name=\"{name}\"; filename=\"{name}\"\r\n").as_bytes(),
        );
        body.extend_from_slice(b"Content-Type: application/octet-stream\r\n\r\n");
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

pub async fn post_multipart(app: &Router, uri: &str, parts: &[(&str, Vec<u8>)]) -> Reply {
    let req = Request::post(uri)
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(multipart(parts)))
        .unwrap();
    send(app, req).await
}
