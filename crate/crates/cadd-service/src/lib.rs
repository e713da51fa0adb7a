//! HTTP service around the slide analysis pipeline.
//!
//! Everything persistent lives under one data directory:
//!
//! ```text
//! <data_dir>/
//!   slides/<slide_id>/manifest.json     slide record
//!   slides/<slide_id>/source.<ext>      uploaded raster, or
//!   slides/<slide_id>/tiles/r<R>_c<C>.png
//!   slides/<slide_id>/truth.json        registered ground truth
//!   jobs/<job_id>.json                  job record
//!   jobs/<job_id>/                      labelmap.png heatmap.png reconstruction.png
//!                                       diagnosis.json predictions.jsonl
//! ```
//!
//! Slide and artifact directories are staged under a dot-prefixed name and
//! renamed into place when complete; job records are replaced atomically.

pub mod config;
pub mod error;
mod fsutil;
pub mod http;
pub mod jobs;
pub mod pipeline;
pub mod service;
pub mod slides;

pub use config::ServiceConfig;
pub use error::ServiceError;
pub use http::{router, ApiError};
pub use jobs::{AnalysisJob, AnalysisMode, JobStatus, JobStore, StageTimings, MAX_ATTEMPTS};
pub use service::{Service, ServedModel};
pub use slides::{SlidePayload, SlideRecord, SlideStore, UploadManifest};
