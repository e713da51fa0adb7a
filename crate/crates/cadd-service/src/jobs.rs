use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use histocad_slidekit::Roi;
use histocad_verdict::DiagnosisResult;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ServiceError;
use crate::fsutil::write_atomic;

/// A job found `running` at startup is re-queued while it has been started
/// fewer than this many times, and failed otherwise.
pub const MAX_ATTEMPTS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalysisMode {
    Wsi,
    Roi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn can_move_to(self, next: JobStatus) -> bool {
        matches!(
            (self, next),
            (JobStatus::Queued, JobStatus::Running)
                | (JobStatus::Running, JobStatus::Done)
                | (JobStatus::Running, JobStatus::Failed)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }

    fn name(self) -> &'static str {
        match self {
            JobStatus::Queued => "queued",
            JobStatus::Running => "running",
            JobStatus::Done => "done",
            JobStatus::Failed => "failed",
        }
    }
}

/// Seconds spent per stage; per-unit fields are divided by the tile count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub tiling_s: f64,
    pub inference_s_per_patch: f64,
    pub reconstruction_s_per_tile: f64,
    pub labelmap_s_per_tile: f64,
    pub heatmap_s_per_tile: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub labelmap: String,
    pub heatmap: String,
    pub reconstruction: String,
    pub diagnosis: String,
}

impl Artifacts {
    pub const FILES: [&'static str; 4] = ["labelmap.png", "heatmap.png", "reconstruction.png", "diagnosis.json"];

    pub fn for_job(job_id: &str) -> Self {
        let url = |f: &str| format!("/jobs/{job_id}/{f}");
        Self {
            labelmap: url("labelmap.png"),
            heatmap: url("heatmap.png"),
            reconstruction: url("reconstruction.png"),
            diagnosis: url("diagnosis.json"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub diagnosis: DiagnosisResult,
    pub rows: u32,
    pub cols: u32,
    pub tile_count: usize,
    pub artifacts: Artifacts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobFailure {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisJob {
    pub job_id: String,
    /// Submission order across the store.
    pub sequence: u64,
    pub slide_id: String,
    pub mode: AnalysisMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi: Option<Roi>,
    pub checkpoint_id: String,
    pub status: JobStatus,
    /// Times the job has entered `running`.
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<JobResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<JobFailure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

/// Job id derived from the idempotency key, so resubmission finds the same job.
pub fn job_id(slide_id: &str, mode: AnalysisMode, roi: Option<Roi>, checkpoint_id: &str) -> String {
    let key = serde_json::json!([slide_id, mode, roi, checkpoint_id]).to_string();
    format!("j{}", hex::encode(&Sha256::digest(key.as_bytes())[..8]))
}

/// Job records, one JSON file each. All mutations go through one lock and
/// are persisted before the lock is released.
#[derive(Debug)]
pub struct JobStore {
    dir: PathBuf,
    jobs: Mutex<BTreeMap<String, AnalysisJob>>,
}

impl JobStore {
    pub fn open(dir: &Path) -> Result<Self, ServiceError> {
        fs::create_dir_all(dir)?;
        let mut jobs = BTreeMap::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") && path.is_file() {
                let job: AnalysisJob = serde_json::from_slice(&fs::read(&path)?)
                    .map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display())))?;
                jobs.insert(job.job_id.clone(), job);
            }
        }
        Ok(Self { dir: dir.to_path_buf(), jobs: Mutex::new(jobs) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn artifact_dir(&self, job_id: &str) -> PathBuf {
        self.dir.join(job_id)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, BTreeMap<String, AnalysisJob>> {
        self.jobs.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn persist(&self, job: &AnalysisJob) -> Result<(), ServiceError> {
        let bytes = serde_json::to_vec_pretty(job).map_err(|e| ServiceError::Internal(e.to_string()))?;
        write_atomic(&self.dir.join(format!("{}.json", job.job_id)), &bytes)?;
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<AnalysisJob> {
        self.lock().get(id).cloned()
    }

    pub fn list(&self) -> Vec<AnalysisJob> {
        let mut jobs: Vec<_> = self.lock().values().cloned().collect();
        jobs.sort_by_key(|j| j.sequence);
        jobs
    }

    /// Returns the job for this key and whether it was newly created.
    pub fn submit(
        &self,
        slide_id: &str,
        mode: AnalysisMode,
        roi: Option<Roi>,
        checkpoint_id: &str,
    ) -> Result<(AnalysisJob, bool), ServiceError> {
        if (mode == AnalysisMode::Roi) != roi.is_some() {
            return Err(ServiceError::Validation("roi must be given exactly when mode is roi".into()));
        }
        let id = job_id(slide_id, mode, roi, checkpoint_id);
        let mut jobs = self.lock();
        if let Some(existing) = jobs.get(&id) {
            return Ok((existing.clone(), false));
        }
        let job = AnalysisJob {
            job_id: id.clone(),
            sequence: jobs.values().map(|j| j.sequence + 1).max().unwrap_or(0),
            slide_id: slide_id.to_string(),
            mode,
            roi,
            checkpoint_id: checkpoint_id.to_string(),
            status: JobStatus::Queued,
            attempts: 0,
            result: None,
            failure: None,
            timings: None,
        };
        self.persist(&job)?;
        jobs.insert(id, job.clone());
        Ok((job, true))
    }

    fn transition(
        &self,
        id: &str,
        to: JobStatus,
        update: impl FnOnce(&mut AnalysisJob),
    ) -> Result<AnalysisJob, ServiceError> {
        let mut jobs = self.lock();
        let job = jobs.get(id).ok_or_else(|| ServiceError::not_found("job", id))?;
        if !job.status.can_move_to(to) {
            return Err(ServiceError::Transition { from: job.status.name().into(), to: to.name().into() });
        }
        let mut next = job.clone();
        next.status = to;
        update(&mut next);
        self.persist(&next)?;
        jobs.insert(id.to_string(), next.clone());
        Ok(next)
    }

    pub fn start(&self, id: &str) -> Result<AnalysisJob, ServiceError> {
        self.transition(id, JobStatus::Running, |j| j.attempts += 1)
    }

    pub fn complete(&self, id: &str, result: JobResult, timings: StageTimings) -> Result<AnalysisJob, ServiceError> {
        self.transition(id, JobStatus::Done, |j| {
            j.result = Some(result);
            j.timings = Some(timings);
        })
    }

    pub fn fail(&self, id: &str, failure: JobFailure) -> Result<AnalysisJob, ServiceError> {
        self.transition(id, JobStatus::Failed, |j| j.failure = Some(failure))
    }

    /// Startup pass over jobs interrupted while running: each goes back to
    /// `queued` once, and a second interruption fails it. Returns the ids of
    /// every job that is now queued, in submission order.
    pub fn recover(&self) -> Result<Vec<String>, ServiceError> {
        let mut jobs = self.lock();
        let interrupted: Vec<String> =
            jobs.values().filter(|j| j.status == JobStatus::Running).map(|j| j.job_id.clone()).collect();
        for id in interrupted {
            let mut job = jobs[&id].clone();
            if job.attempts < MAX_ATTEMPTS {
                job.status = JobStatus::Queued;
                log::warn!("re-queueing interrupted job {id}");
            } else {
                job.status = JobStatus::Failed;
                job.failure = Some(JobFailure {
                    code: "interrupted".into(),
                    message: format!("service stopped during {} attempts", job.attempts),
                });
                log::warn!("job {id} interrupted {} times, marking failed", job.attempts);
            }
            self.persist(&job)?;
            jobs.insert(id, job);
        }
        let mut queued: Vec<&AnalysisJob> = jobs.values().filter(|j| j.status == JobStatus::Queued).collect();
        queued.sort_by_key(|j| j.sequence);
        Ok(queued.into_iter().map(|j| j.job_id.clone()).collect())
    }

    pub fn status_counts(&self) -> BTreeMap<JobStatus, usize> {
        let mut counts = BTreeMap::new();
        for j in self.lock().values() {
            *counts.entry(j.status).or_insert(0) += 1;
        }
        counts
    }
}
