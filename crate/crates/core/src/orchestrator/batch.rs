use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{calibrate, files, CalibrationTask, RunConfig, RunError, RunResult, TaskFile, Termination};
use crate::bench::BenchmarkManifest;
use crate::seed::fnv1a64;

/// Where a task comes from, recorded so a run can be replayed later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSource {
    Manifest { path: PathBuf, task: String },
    File { path: PathBuf },
}

impl TaskSource {
    pub fn load(&self) -> Result<CalibrationTask, RunError> {
        match self {
            TaskSource::Manifest { path, task } => {
                let manifest = BenchmarkManifest::load(path)?;
                let dir = path.parent().unwrap_or(Path::new("."));
                CalibrationTask::from_manifest(&manifest, dir, task)
            }
            TaskSource::File { path } => {
                let dir = path.parent().unwrap_or(Path::new("."));
                TaskFile::load(path)?.resolve(dir)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub id: String,
    pub source: TaskSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TaskOutcome {
    Finished { result: RunResult, resumed: bool },
    Failed { task_id: String, error: String },
}

impl TaskOutcome {
    pub fn result(&self) -> Option<&RunResult> {
        match self {
            TaskOutcome::Finished { result, .. } => Some(result),
            TaskOutcome::Failed { .. } => None,
        }
    }
}

fn run_job(job: &Job, cfg: &RunConfig, out_root: &Path, cancel: Option<&AtomicBool>) -> TaskOutcome {
    let run_dir = out_root.join(&job.id);
    let result_path = run_dir.join(files::RESULT);
    if let Ok(done) = RunResult::load(&result_path) {
        if done.termination != Termination::Aborted {
            log::info!("{}: already finished, skipping", job.id);
            return TaskOutcome::Finished { result: done, resumed: true };
        }
    }
    let mut task_cfg = cfg.clone();
    task_cfg.seed = cfg.seed ^ fnv1a64(&job.id);
    if let Some(replay) = &cfg.proposer.replay {
        if replay.is_dir() {
            task_cfg.proposer.replay = Some(replay.join(format!("{}.jsonl", job.id)));
        }
    }
    let outcome = job
        .source
        .load()
        .and_then(|task| calibrate(&task, &task_cfg, &run_dir, Some(job.source.clone()), cancel));
    match outcome {
        Ok(result) => TaskOutcome::Finished { result, resumed: false },
        Err(e) => {
            log::error!("{}: {e}", job.id);
            TaskOutcome::Failed { task_id: job.id.clone(), error: e.to_string() }
        }
    }
}

/// Runs `jobs` on `parallelism` worker threads, one directory per task
/// under `out_root`. Tasks whose directory already holds a finished result
/// are not run again. Each task's seed is `cfg.seed ^ fnv1a64(id)`, so
/// results do not depend on scheduling. Outcomes come back in job order.
pub fn batch_run(
    jobs: &[Job],
    cfg: &RunConfig,
    out_root: &Path,
    parallelism: usize,
    cancel: Option<&AtomicBool>,
) -> Result<Vec<TaskOutcome>, RunError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_root).map_err(|e| RunError::io(out_root, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| RunError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| jobs.par_iter().map(|j| run_job(j, cfg, out_root, cancel)).collect()))
}

/// Every task of a benchmark manifest (or those listed in `only`).
pub fn run_suite(
    manifest_path: &Path,
    only: Option<&[String]>,
    cfg: &RunConfig,
    out_root: &Path,
    parallelism: usize,
    cancel: Option<&AtomicBool>,
) -> Result<Vec<TaskOutcome>, RunError> {
    let manifest = BenchmarkManifest::load(manifest_path)?;
    let jobs: Vec<Job> = manifest
        .tasks
        .iter()
        .filter(|t| only.is_none_or(|ids| ids.contains(&t.id)))
        .map(|t| Job {
            id: t.id.clone(),
            source: TaskSource::Manifest { path: manifest_path.to_path_buf(), task: t.id.clone() },
        })
        .collect();
    batch_run(&jobs, cfg, out_root, parallelism, cancel)
}
