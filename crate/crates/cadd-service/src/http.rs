use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use histocad_core::{ClassLabel, Modality, CLASS_LIST_VERSION};
use histocad_slidekit::{parse_tile_name, Roi};
use histocad_visio::{dgraph_layout, dgraph_svg, layout_csv, CohortSample, SvgOptions};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::ServiceError;
use crate::jobs::{AnalysisJob, AnalysisMode, Artifacts, JobStatus};
use crate::service::Service;
use crate::slides::{SlidePayload, UploadManifest};

type AppState = Arc<Service>;

/// JSON error body: `{"error": {"code": ..., "message": ...}}`.
pub struct ApiError(pub ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self.0.code() {
            "not_found" => StatusCode::NOT_FOUND,
            "validation" => StatusCode::UNPROCESSABLE_ENTITY,
            "conflict" | "not_ready" | "precondition" | "transition" => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.0.code(), "message": self.0.to_string() } });
        (self.status(), Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ServiceError::Internal(e.to_string()))?
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::Validation(format!("request body: {e}")))
}

pub fn router(service: AppState) -> Router {
    let limit = service.config().max_upload_bytes;
    Router::new()
        .route("/healthz", get(healthz))
        .route("/slides", post(upload_slide))
        .route("/slides/{id}", get(get_slide))
        .route("/slides/{id}/tiles/{row}/{tile}", get(get_tile))
        .route("/slides/{id}/analyze", post(submit_analysis))
        .route("/slides/{id}/truth", post(register_truth))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/{artifact}", get(get_artifact))
        .route("/cohort/dgraph.svg", get(cohort_svg))
        .route("/cohort/dgraph.csv", get(cohort_csv))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(service)
}

async fn healthz(State(svc): State<AppState>) -> Json<serde_json::Value> {
    let model = &svc.shared().model;
    let counts = svc.jobs().status_counts();
    let count = |s: JobStatus| counts.get(&s).copied().unwrap_or(0);
    Json(json!({
        "status": "ok",
        "service": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "checkpoint": {
            "id": svc.checkpoint_id(),
            "path": svc.config().checkpoint,
            "parameter_count": model.parameter_count(),
            "input_size": model.config().input_size,
            "classes": model.classes(),
            "class_list_version": CLASS_LIST_VERSION,
        },
        "workers": svc.config().workers,
        "tile_size": svc.config().tile_size,
        "jobs": {
            "queued": count(JobStatus::Queued),
            "running": count(JobStatus::Running),
            "done": count(JobStatus::Done),
            "failed": count(JobStatus::Failed),
        },
    }))
}

async fn upload_slide(State(svc): State<AppState>, mut form: Multipart) -> ApiResult<Response> {
    let bad = |e: axum::extract::multipart::MultipartError| ServiceError::Validation(format!("multipart: {e}"));
    let mut manifest: Option<UploadManifest> = None;
    let mut raster: Option<Vec<u8>> = None;
    let mut tiles = Vec::new();
    while let Some(field) = form.next_field().await.map_err(bad)? {
        let name = field.name().unwrap_or_default().to_string();
        let file_name = field.file_name().map(str::to_string);
        let data = field.bytes().await.map_err(bad)?;
        if name == "manifest" {
            manifest = Some(parse_json(&data)?);
        } else if name == "raster" {
            raster = Some(data.to_vec());
        } else if let Some(pos) = parse_tile_name(&name).or_else(|| file_name.as_deref().and_then(parse_tile_name)) {
            tiles.push((pos, data.to_vec()));
        } else {
            return Err(ServiceError::Validation(format!(
                "unexpected part `{name}`; send `manifest` plus `raster` or tiles named r<row>_c<col>.png"
            ))
            .into());
        }
    }
    let manifest = manifest.ok_or_else(|| ServiceError::Validation("missing `manifest` part".into()))?;
    let payload = match (raster, tiles.is_empty()) {
        (Some(bytes), true) => SlidePayload::Raster { bytes },
        (None, false) => SlidePayload::Tiles(tiles),
        (None, true) => return Err(ServiceError::Validation("missing `raster` part or tile parts".into()).into()),
        (Some(_), false) => {
            return Err(ServiceError::Validation("send either a raster or tiles, not both".into()).into())
        }
    };
    let svc2 = Arc::clone(&svc);
    let record = blocking(move || svc2.slides().create(manifest, payload)).await?;
    let (rows, cols) = record.grid_dims(svc.config().tile_size);
    let body = json!({ "slide_id": record.slide_id, "rows": rows, "cols": cols });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SlideView {
    pub slide_id: String,
    pub patient_id: String,
    pub modality: Modality,
    pub width_px: u32,
    pub height_px: u32,
    pub tile_size: u32,
    pub rows: u32,
    pub cols: u32,
    pub truth: Option<ClassLabel>,
}

async fn get_slide(State(svc): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SlideView>> {
    let slide = svc.slides().get(&id)?;
    let truth = svc.slides().truth(&id)?.map(|t| t.label);
    let tile_size = svc.config().tile_size;
    let (rows, cols) = slide.grid_dims(tile_size);
    Ok(Json(SlideView {
        slide_id: slide.slide_id,
        patient_id: slide.patient_id,
        modality: slide.modality,
        width_px: slide.width_px,
        height_px: slide.height_px,
        tile_size,
        rows,
        cols,
        truth,
    }))
}

async fn get_tile(State(svc): State<AppState>, Path((id, row, tile)): Path<(String, String, String)>) -> ApiResult<Response> {
    let position = row.parse::<u32>().ok().zip(tile.strip_suffix(".png").and_then(|c| c.parse::<u32>().ok()));
    let Some((r, c)) = position else {
        return Err(ServiceError::not_found("tile", format!("{id}/{row}/{tile}")).into());
    };
    let ts = svc.config().tile_size;
    let png = blocking(move || svc.slides().tile_png(&id, r, c, ts)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnalyzeRequest {
    pub mode: AnalysisMode,
    #[serde(default)]
    pub roi: Option<Roi>,
}

async fn submit_analysis(State(svc): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: AnalyzeRequest = parse_json(&body)?;
    let (job, created) = svc.submit(&id, req.mode, req.roi)?;
    let status = if created { StatusCode::ACCEPTED } else { StatusCode::OK };
    let body = json!({ "job_id": job.job_id, "status": job.status, "created": created });
    Ok((status, Json(body)).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TruthRequest {
    pub label: ClassLabel,
}

async fn register_truth(
    State(svc): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let req: TruthRequest = parse_json(&body)?;
    let truth = svc.slides().set_truth(&id, req.label)?;
    Ok(Json(json!({ "slide_id": id, "label": truth.label })))
}

async fn get_job(State(svc): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<AnalysisJob>> {
    svc.jobs().get(&id).map(Json).ok_or_else(|| ServiceError::not_found("job", id).into())
}

async fn get_artifact(State(svc): State<AppState>, Path((id, artifact)): Path<(String, String)>) -> ApiResult<Response> {
    let job = svc.jobs().get(&id).ok_or_else(|| ServiceError::not_found("job", &id))?;
    let content_type = match artifact.as_str() {
        a if a.ends_with(".png") && Artifacts::FILES.contains(&a) => "image/png",
        "diagnosis.json" => "application/json",
        "predictions.jsonl" => "application/x-ndjson",
        _ => return Err(ServiceError::not_found("artifact", format!("{id}/{artifact}")).into()),
    };
    if job.status != JobStatus::Done {
        let message = match &job.failure {
            Some(f) => format!("job failed ({}): {}", f.code, f.message),
            None => format!("job is {}", serde_json::to_value(job.status).unwrap_or_default()),
        };
        return Err(ServiceError::NotReady(message).into());
    }
    let path = svc.jobs().artifact_dir(&id).join(&artifact);
    let bytes = tokio::fs::read(&path).await.map_err(ServiceError::Io)?;
    Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response())
}

#[derive(Debug, Default, Deserialize)]
pub struct CohortFilter {
    pub modality: Option<Modality>,
}

/// One sample per slide that has ground truth and a finished job; the most
/// recent WSI job is preferred over ROI jobs.
pub fn cohort_samples(svc: &Service, filter: &CohortFilter) -> Result<Vec<CohortSample>, ServiceError> {
    let jobs = svc.jobs().list();
    let mut samples = Vec::new();
    for id in svc.slides().ids()? {
        let Some(truth) = svc.slides().truth(&id)? else { continue };
        let slide = svc.slides().get(&id)?;
        if filter.modality.is_some_and(|m| m != slide.modality) {
            continue;
        }
        let done = jobs.iter().filter(|j| j.slide_id == id && j.status == JobStatus::Done);
        let Some(job) = done.max_by_key(|j| (j.mode == AnalysisMode::Wsi, j.sequence)) else { continue };
        let Some(result) = &job.result else { continue };
        samples.push(CohortSample {
            sample_id: id,
            modality: slide.modality,
            correct: result.diagnosis.final_label == truth.label,
            tile_count: result.diagnosis.n as u32,
        });
    }
    if samples.is_empty() {
        return Err(ServiceError::Precondition(
            "the cohort is empty: a slide needs a completed analysis job and ground truth registered via \
             POST /slides/{id}/truth before it appears in the D-Graph"
                .into(),
        ));
    }
    Ok(samples)
}

async fn cohort_svg(State(svc): State<AppState>, Query(filter): Query<CohortFilter>) -> ApiResult<Response> {
    let samples = cohort_samples(&svc, &filter)?;
    let points = dgraph_layout(&samples, 1.0, 1.0).map_err(|e| ServiceError::Internal(e.to_string()))?;
    let svg = dgraph_svg(&points, &SvgOptions::default());
    Ok(([(header::CONTENT_TYPE, "image/svg+xml")], svg).into_response())
}

async fn cohort_csv(State(svc): State<AppState>, Query(filter): Query<CohortFilter>) -> ApiResult<Response> {
    let samples = cohort_samples(&svc, &filter)?;
    let points = dgraph_layout(&samples, 1.0, 1.0).map_err(|e| ServiceError::Internal(e.to_string()))?;
    let csv = layout_csv(&points).map_err(|e| ServiceError::Internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}
