use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{files, CalibrationTask, Phase, RoundLog, RunError, RunManifest};
use crate::memory::BestSoFar;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub rounds_checked: usize,
    /// One line per round whose re-simulation differs from the log.
    pub mismatches: Vec<String>,
    pub best: Option<BestSoFar>,
    pub best_matches: bool,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.mismatches.is_empty() && self.best_matches
    }
}

/// Every line of a `rounds.jsonl` log.
pub fn read_rounds(path: &Path) -> Result<Vec<RoundLog>, RunError> {
    let file = std::fs::File::open(path).map_err(|e| RunError::io(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| RunError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| RunError::json(path, e))?);
    }
    Ok(out)
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

/// Re-simulates every logged round of `run_dir` against `task` and compares
/// residuals, features and events byte for byte; then recomputes the best
/// round and compares it with `best.json`. Nothing is called but the
/// simulator.
pub fn replay(run_dir: &Path, task: &CalibrationTask) -> Result<ReplayReport, RunError> {
    let manifest_path = run_dir.join(files::RUN);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| RunError::io(&manifest_path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| RunError::json(&manifest_path, e))?;
    let rounds = read_rounds(&run_dir.join(files::ROUNDS))?;
    let mut report = ReplayReport::default();
    for r in &rounds {
        let mut params = task.params.clone();
        params.assign(&r.params)?;
        let s = task.evaluate(&params, &manifest.config.loss, r.round, None)?;
        let fb = s.feedback;
        let tag = match r.phase {
            Phase::Warmup => format!("warm-up {}", r.round),
            Phase::Optimize => format!("round {}", r.round),
        };
        for (what, a, b) in [
            ("residuals", json(&fb.residuals), json(&r.residuals)),
            ("features", json(&fb.features), json(&r.features)),
            ("events", json(&fb.events), json(&r.events)),
        ] {
            if a != b {
                report.mismatches.push(format!("{tag}: {what} differ: replay {a} vs log {b}"));
            }
        }
        report.rounds_checked += 1;
        if r.phase == Phase::Optimize && fb.succeeded() {
            let better = report.best.as_ref().is_none_or(|b| fb.residuals.total_mape < b.total_mape);
            if better {
                report.best = Some(BestSoFar { round: r.round, total_mape: fb.residuals.total_mape, theta: r.params.clone() });
            }
        }
    }
    let best_path = run_dir.join(files::BEST);
    let logged: Option<BestSoFar> = match std::fs::read_to_string(&best_path) {
        Ok(t) => Some(serde_json::from_str(&t).map_err(|e| RunError::json(&best_path, e))?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(RunError::io(&best_path, e)),
    };
    report.best_matches = json(&logged) == json(&report.best);
    Ok(report)
}

/// As [`replay`], loading the task from the source recorded in `run.json`.
pub fn replay_dir(run_dir: &Path) -> Result<ReplayReport, RunError> {
    let manifest_path = run_dir.join(files::RUN);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| RunError::io(&manifest_path, e))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| RunError::json(&manifest_path, e))?;
    let source = manifest
        .source
        .ok_or_else(|| RunError::Task("run.json records no task source; pass the task explicitly".into()))?;
    replay(run_dir, &source.load()?)
}
