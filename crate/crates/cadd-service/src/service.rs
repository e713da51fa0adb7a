use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use histocad_mavit::{checkpoint_id, Mavit};
use histocad_slidekit::Roi;
use histocad_verdict::VoteConfig;

use crate::config::ServiceConfig;
use crate::error::ServiceError;
use crate::jobs::{AnalysisJob, AnalysisMode, Artifacts, JobFailure, JobResult, JobStore};
use crate::pipeline::{analyze, AnalysisSettings};
use crate::slides::SlideStore;

/// The classifier served by every worker.
pub type ServedModel = Mavit<f32>;

/// State shared read-only (model, config) or through the stores' own locks.
pub struct Shared {
    pub config: ServiceConfig,
    pub jobs: JobStore,
    pub slides: SlideStore,
    pub model: ServedModel,
    pub checkpoint_id: String,
}

/// Job queue drained by a fixed number of worker threads.
pub struct Service {
    shared: Arc<Shared>,
    queue: Mutex<Option<Sender<String>>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

impl Service {
    /// Loads the checkpoint, opens the data directory, re-queues interrupted
    /// jobs and starts the workers.
    pub fn start(config: ServiceConfig) -> Result<Self, ServiceError> {
        config.validate()?;
        let bytes = fs::read(&config.checkpoint).map_err(|e| {
            ServiceError::Config(format!("cannot read checkpoint {}: {e}", config.checkpoint.display()))
        })?;
        let model = ServedModel::from_checkpoint_bytes(&bytes)?;
        let shared = Arc::new(Shared {
            jobs: JobStore::open(&config.data_dir.join("jobs"))?,
            slides: SlideStore::open(&config.data_dir.join("slides"))?,
            checkpoint_id: checkpoint_id(&bytes),
            model,
            config,
        });
        remove_stale_staging(shared.jobs.dir())?;
        remove_stale_staging(&shared.config.data_dir.join("slides"))?;
        let pending = shared.jobs.recover()?;

        let (tx, rx) = channel::<String>();
        let rx = Arc::new(Mutex::new(rx));
        let workers = (0..shared.config.workers)
            .map(|i| {
                let shared = Arc::clone(&shared);
                let rx = Arc::clone(&rx);
                std::thread::Builder::new()
                    .name(format!("cadd-worker-{i}"))
                    .spawn(move || worker_loop(&shared, &rx))
                    .map_err(ServiceError::Io)
            })
            .collect::<Result<Vec<_>, _>>()?;
        for id in pending {
            let _ = tx.send(id);
        }
        Ok(Self { shared, queue: Mutex::new(Some(tx)), workers: Mutex::new(workers) })
    }

    pub fn shared(&self) -> &Shared {
        &self.shared
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.shared.config
    }

    pub fn jobs(&self) -> &JobStore {
        &self.shared.jobs
    }

    pub fn slides(&self) -> &SlideStore {
        &self.shared.slides
    }

    pub fn checkpoint_id(&self) -> &str {
        &self.shared.checkpoint_id
    }

    /// Queues an analysis, or returns the existing job for the same slide,
    /// mode, region and checkpoint. The flag is true for a new job.
    pub fn submit(&self, slide_id: &str, mode: AnalysisMode, roi: Option<Roi>) -> Result<(AnalysisJob, bool), ServiceError> {
        let slide = self.shared.slides.get(slide_id)?;
        if let Some(roi) = roi {
            roi.check_within(slide.width_px, slide.height_px)
                .map_err(|e| ServiceError::Validation(e.to_string()))?;
        }
        let (job, created) = self.shared.jobs.submit(slide_id, mode, roi, &self.shared.checkpoint_id)?;
        if created {
            let queue = self.queue.lock().unwrap_or_else(|p| p.into_inner());
            match queue.as_ref() {
                Some(tx) => tx.send(job.job_id.clone()).map_err(|_| ServiceError::Internal("worker pool stopped".into()))?,
                None => return Err(ServiceError::Internal("service is shutting down".into())),
            }
        }
        Ok((job, created))
    }

    /// Polls until the job reaches a terminal state or `timeout` passes.
    pub fn wait_for(&self, job_id: &str, timeout: Duration) -> Option<AnalysisJob> {
        let deadline = Instant::now() + timeout;
        loop {
            let job = self.shared.jobs.get(job_id)?;
            if job.status.is_terminal() || Instant::now() >= deadline {
                return Some(job);
            }
            std::thread::sleep(Duration::from_millis(10));
        }
    }

    /// Stops accepting jobs and waits for the workers to drain the queue.
    pub fn shutdown(&self) {
        self.queue.lock().unwrap_or_else(|p| p.into_inner()).take();
        let handles = std::mem::take(&mut *self.workers.lock().unwrap_or_else(|p| p.into_inner()));
        for h in handles {
            let _ = h.join();
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Drops `.<id>.partial` directories left by a process that died mid-write.
fn remove_stale_staging(dir: &Path) -> Result<(), ServiceError> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') && name.ends_with(".partial") {
            log::warn!("removing stale staging directory {}", entry.path().display());
            fs::remove_dir_all(entry.path())?;
        }
    }
    Ok(())
}

fn worker_loop(shared: &Shared, rx: &Mutex<Receiver<String>>) {
    loop {
        let next = rx.lock().unwrap_or_else(|p| p.into_inner()).recv();
        match next {
            Ok(id) => run_job(shared, &id),
            Err(_) => return,
        }
    }
}

/// Runs one job. Artifacts are written to a staging directory that is
/// renamed into place only when every file is complete.
pub fn run_job(shared: &Shared, job_id: &str) {
    let job = match shared.jobs.start(job_id) {
        Ok(j) => j,
        Err(e) => {
            log::warn!("skipping job {job_id}: {e}");
            return;
        }
    };
    let staging = shared.jobs.dir().join(format!(".{job_id}.partial"));
    let outcome = catch_unwind(AssertUnwindSafe(|| execute(shared, &job, &staging)))
        .unwrap_or_else(|_| Err(ServiceError::Internal("analysis panicked".into())));
    let recorded = match outcome {
        Ok((result, timings)) => shared.jobs.complete(job_id, result, timings),
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            log::warn!("job {job_id} failed: {e}");
            shared.jobs.fail(job_id, JobFailure { code: e.code().into(), message: e.to_string() })
        }
    };
    if let Err(e) = recorded {
        log::error!("cannot record outcome of job {job_id}: {e}");
    }
}

fn execute(
    shared: &Shared,
    job: &AnalysisJob,
    staging: &Path,
) -> Result<(JobResult, crate::jobs::StageTimings), ServiceError> {
    let slide = shared.slides.get(&job.slide_id)?;
    let roi = job.roi.unwrap_or_else(|| slide.whole());
    if staging.exists() {
        fs::remove_dir_all(staging)?;
    }
    fs::create_dir_all(staging)?;
    let settings = AnalysisSettings {
        tile_size: shared.config.tile_size,
        vote: VoteConfig { max_pad_fraction: shared.config.max_pad_fraction },
        render_scale: shared.config.render_scale,
        checkpoint_id: shared.checkpoint_id.clone(),
    };
    let analysis = analyze(&shared.model, &slide, roi, &settings, staging)?;
    let final_dir = shared.jobs.artifact_dir(&job.job_id);
    if final_dir.exists() {
        fs::remove_dir_all(&final_dir)?;
    }
    fs::rename(staging, &final_dir)?;
    let result = JobResult {
        diagnosis: analysis.diagnosis,
        rows: analysis.rows,
        cols: analysis.cols,
        tile_count: analysis.records.len(),
        artifacts: Artifacts::for_job(&job.job_id),
    };
    Ok((result, analysis.timings))
}
