//! Benchmark generation: perturb a base cell, keep what simulates and matters,
//! sample a deterministic task suite.

pub mod rules;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use rules::{apply_perturbation, extreme_rules, regular_combos, rules_for, Mode, Operation, Override, PerturbationRule};

use crate::params::{ParamError, PhysicalParameterSet};
use crate::seed;
use crate::sim::{run_protocol, Protocol, SimulationTrace, TraceError};

/// Minimum relative change in discharge capacity for a task to count.
pub const SENSITIVITY_THRESHOLD: f64 = 0.01;
pub const DEFAULT_C_RATES: [f64; 3] = [0.2, 1.0, 2.0];
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("n_per_mode must be at least 1")]
    EmptySample,
    #[error("no base parameter sets given")]
    NoBases,
    #[error("duplicate base name `{0}`")]
    DuplicateBase(String),
    #[error("unknown base `{0}`")]
    UnknownBase(String),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io { path: path.display().to_string(), source }
}

/// The CC-CV protocol a task is simulated under, with the cell's own cutoffs.
pub fn task_protocol(params: &PhysicalParameterSet, c_rate: f64) -> Result<Protocol, ParamError> {
    let d = params.resolve()?;
    Ok(Protocol::cccv(c_rate, d.lower_cutoff, d.upper_cutoff))
}

/// Runs `protocol`, returning the trace when it ends without failure.
fn stable_trace(params: &PhysicalParameterSet, protocol: &Protocol) -> Result<SimulationTrace, String> {
    match run_protocol(params, protocol, None, None) {
        Ok(t) if t.succeeded() => Ok(t),
        Ok(t) => Err(t.event_label()),
        Err(e) => Err(e.to_string()),
    }
}

pub fn stability_filter(params: &PhysicalParameterSet, protocol: &Protocol) -> bool {
    stable_trace(params, protocol).is_ok()
}

fn relative_change(base_q: f64, q: f64) -> f64 {
    (q - base_q).abs() / base_q
}

/// True when the perturbed set moves discharge capacity by at least 1 %.
pub fn sensitivity_filter(base: &PhysicalParameterSet, perturbed: &PhysicalParameterSet, protocol: &Protocol) -> bool {
    match (stable_trace(base, protocol), stable_trace(perturbed, protocol)) {
        (Ok(a), Ok(b)) => relative_change(a.discharge_capacity_ah, b.discharge_capacity_ah) >= SENSITIVITY_THRESHOLD,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOnly {
    pub theta_star: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTask {
    pub id: String,
    pub base: String,
    pub rule_id: String,
    pub description: String,
    pub mode: Mode,
    pub c_rate: f64,
    pub protocol: Protocol,
    /// Parameters the calibration searches over, the ones the rule touched.
    pub search_keys: Vec<String>,
    pub theta_init: BTreeMap<String, f64>,
    /// Path of the target CSV relative to the manifest.
    pub target_trace: String,
    pub seed: u64,
    pub eval_only: EvalOnly,
}

/// What a proposer may see of a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub id: String,
    pub base: String,
    pub mode: Mode,
    pub c_rate: f64,
    pub protocol: Protocol,
    pub search_keys: Vec<String>,
    pub theta_init: BTreeMap<String, f64>,
    pub target_trace: String,
}

impl BenchmarkTask {
    pub fn view(&self) -> TaskView {
        TaskView {
            id: self.id.clone(),
            base: self.base.clone(),
            mode: self.mode,
            c_rate: self.c_rate,
            protocol: self.protocol.clone(),
            search_keys: self.search_keys.clone(),
            theta_init: self.theta_init.clone(),
            target_trace: self.target_trace.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub candidates: usize,
    pub stability_rejected: usize,
    pub sensitivity_rejected: usize,
    pub valid: usize,
    pub requested: usize,
    pub selected: usize,
    pub shortfall: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStage {
    Stability,
    Sensitivity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub stage: FilterStage,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub modes: BTreeMap<Mode, ModeStats>,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub suite_seed: u64,
    pub bases: BTreeMap<String, PhysicalParameterSet>,
    pub tasks: Vec<BenchmarkTask>,
    pub filter_stats: FilterStats,
}

impl BenchmarkManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        Self::from_json(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn task(&self, id: &str) -> Option<&BenchmarkTask> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn base_params(&self, task: &BenchmarkTask) -> Result<&PhysicalParameterSet, BenchError> {
        self.bases.get(&task.base).ok_or_else(|| BenchError::UnknownBase(task.base.clone()))
    }

    /// The hidden target parameter set of `task`.
    pub fn true_params(&self, task: &BenchmarkTask) -> Result<PhysicalParameterSet, BenchError> {
        let mut p = self.base_params(task)?.clone();
        for (k, v) in &task.eval_only.theta_star {
            p.set(k, *v)?;
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub bases: Vec<PhysicalParameterSet>,
    pub c_rates: Vec<f64>,
    pub modes: Vec<Mode>,
    pub n_per_mode: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            bases: vec![PhysicalParameterSet::default_set()],
            c_rates: DEFAULT_C_RATES.to_vec(),
            modes: vec![Mode::Extreme, Mode::Regular],
            n_per_mode: 100,
            seed: 0,
        }
    }
}

/// A generated suite: the manifest plus the target traces it refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSuite {
    pub manifest: BenchmarkManifest,
    pub targets: BTreeMap<String, SimulationTrace>,
}

impl GeneratedSuite {
    /// Writes `manifest.json` and `targets/<id>.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, BenchError> {
        std::fs::create_dir_all(dir.join("targets")).map_err(io_err(dir))?;
        for task in &self.manifest.tasks {
            self.targets[&task.id].save_csv(&dir.join(&task.target_trace))?;
        }
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.manifest.to_json()).map_err(io_err(&path))?;
        Ok(path)
    }
}

fn rate_label(c: f64) -> String {
    if c.fract() == 0.0 {
        format!("{c:.0}C")
    } else {
        format!("{c}C")
    }
}

pub fn task_id(base: &str, rule: &PerturbationRule, c_rate: f64) -> String {
    format!("{base}-{}-{}", rule.id, rate_label(c_rate))
}

struct Candidate<'a> {
    base: &'a PhysicalParameterSet,
    rule: PerturbationRule,
    c_rate: f64,
    id: String,
}

enum Outcome {
    Valid(Box<(BenchmarkTask, SimulationTrace)>),
    Rejected(Rejection),
}

fn evaluate(c: &Candidate, base_q: &Result<f64, String>, seed: u64) -> Outcome {
    let reject = |stage, reason: String| Outcome::Rejected(Rejection { id: c.id.clone(), stage, reason });
    let base_q = match base_q {
        Ok(q) => *q,
        Err(e) => return reject(FilterStage::Stability, format!("base set unstable: {e}")),
    };
    let perturbed = match apply_perturbation(c.base, &c.rule) {
        Ok(p) => p,
        Err(e) => return reject(FilterStage::Stability, format!("invalid parameters: {e}")),
    };
    let protocol = match task_protocol(&perturbed, c.c_rate) {
        Ok(p) => p,
        Err(e) => return reject(FilterStage::Stability, format!("invalid parameters: {e}")),
    };
    let trace = match stable_trace(&perturbed, &protocol) {
        Ok(t) => t,
        Err(e) => return reject(FilterStage::Stability, e),
    };
    let dq = relative_change(base_q, trace.discharge_capacity_ah);
    if !(dq >= SENSITIVITY_THRESHOLD) {
        return reject(FilterStage::Sensitivity, format!("capacity change {:.3}% below 1%", 100.0 * dq));
    }
    let keys = c.rule.parameters();
    let pick = |p: &PhysicalParameterSet| -> BTreeMap<String, f64> {
        keys.iter().map(|k| (k.clone(), p.get(k).expect("rule keys exist"))).collect()
    };
    let task = BenchmarkTask {
        id: c.id.clone(),
        base: c.base.name.clone(),
        rule_id: c.rule.id.clone(),
        description: c.rule.description.clone(),
        mode: c.rule.mode,
        c_rate: c.c_rate,
        protocol,
        search_keys: keys.clone(),
        theta_init: pick(c.base),
        target_trace: format!("targets/{}.csv", c.id),
        seed: seed::derive(seed, &c.id),
        eval_only: EvalOnly { theta_star: pick(&perturbed) },
    };
    Outcome::Valid(Box::new((task, trace)))
}

/// Enumerates base × C-rate × rule for every mode, filters, and samples up to
/// `n_per_mode` tasks per mode. Sampling ranks valid candidates by a hash of
/// (seed, task id), so the choice of one task never depends on the others
/// present. Tasks are listed in enumeration order.
pub fn generate_manifest(cfg: &BenchConfig) -> Result<GeneratedSuite, BenchError> {
    if cfg.n_per_mode == 0 {
        return Err(BenchError::EmptySample);
    }
    if cfg.bases.is_empty() {
        return Err(BenchError::NoBases);
    }
    let mut bases = BTreeMap::new();
    for b in &cfg.bases {
        if bases.insert(b.name.clone(), b.clone()).is_some() {
            return Err(BenchError::DuplicateBase(b.name.clone()));
        }
    }

    let pairs: Vec<(usize, f64)> =
        (0..cfg.bases.len()).flat_map(|b| cfg.c_rates.iter().map(move |&c| (b, c))).collect();
    let base_q: Vec<Result<f64, String>> = pairs
        .par_iter()
        .map(|&(b, c)| {
            let base = &cfg.bases[b];
            let protocol = task_protocol(base, c).map_err(|e| e.to_string())?;
            stable_trace(base, &protocol).map(|t| t.discharge_capacity_ah)
        })
        .collect();
    let q_of = |b: usize, c: f64| &base_q[pairs.iter().position(|&p| p == (b, c)).expect("pair enumerated")];

    let mut modes = cfg.modes.clone();
    modes.sort();
    modes.dedup();
    let mut stats = FilterStats::default();
    let mut tasks = Vec::new();
    let mut targets = BTreeMap::new();
    for mode in modes {
        let rules = rules_for(mode);
        let mut candidates = Vec::new();
        for (b, base) in cfg.bases.iter().enumerate() {
            for &c in &cfg.c_rates {
                for rule in &rules {
                    candidates.push((b, Candidate { base, rule: rule.clone(), c_rate: c, id: task_id(&base.name, rule, c) }));
                }
            }
        }
        let outcomes: Vec<Outcome> =
            candidates.par_iter().map(|(b, cand)| evaluate(cand, q_of(*b, cand.c_rate), cfg.seed)).collect();

        let mut ms = ModeStats { candidates: candidates.len(), requested: cfg.n_per_mode, ..Default::default() };
        let mut valid = Vec::new();
        for o in outcomes {
            match o {
                Outcome::Valid(v) => valid.push(*v),
                Outcome::Rejected(r) => {
                    match r.stage {
                        FilterStage::Stability => ms.stability_rejected += 1,
                        FilterStage::Sensitivity => ms.sensitivity_rejected += 1,
                    }
                    stats.rejected.push(r);
                }
            }
        }
        ms.valid = valid.len();
        let mut order: Vec<usize> = (0..valid.len()).collect();
        order.sort_by_key(|&i| (valid[i].0.seed, i));
        let mut keep: Vec<usize> = order.into_iter().take(cfg.n_per_mode).collect();
        keep.sort_unstable();
        ms.selected = keep.len();
        ms.shortfall = ms.valid < cfg.n_per_mode;
        let mut valid: Vec<Option<(BenchmarkTask, SimulationTrace)>> = valid.into_iter().map(Some).collect();
        for i in keep {
            let (task, trace) = valid[i].take().expect("index kept once");
            targets.insert(task.id.clone(), trace);
            tasks.push(task);
        }
        stats.modes.insert(mode, ms);
    }
    Ok(GeneratedSuite {
        manifest: BenchmarkManifest { suite_seed: cfg.seed, bases, tasks, filter_stats: stats },
        targets,
    })
}

/// Loads a task's target trace from the manifest's directory.
pub fn load_target(manifest_dir: &Path, task: &BenchmarkTask) -> Result<SimulationTrace, BenchError> {
    Ok(SimulationTrace::load_csv(&manifest_dir.join(&task.target_trace))?)
}
