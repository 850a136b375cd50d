//! What a calibration run fits, and how one parameter vector is scored.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::bench::{load_target, BenchmarkManifest};
use crate::feedback::render::render_failed;
use crate::feedback::{
    build_degradation_feedback, build_feedback, DegradationTarget, FeatureSet, FeedbackPackage, LossConfig, ResidualSet,
    SUCCESS_EVENT,
};
use crate::params::{DegradationParameterSet, ModelParameters, PhysicalParameterSet};
use crate::proposer::PromptInputs;
use crate::sim::{run_cycles, run_protocol, Protocol, SimulationTrace};

pub const MODEL_NAME: &str = "single particle";
pub const INVALID_PARAMETERS_EVENT: &str = "invalid_parameters";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTarget {
    pub protocol: Protocol,
    pub trace: SimulationTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CyclingTarget {
    pub protocol: Protocol,
    pub target: DegradationTarget,
}

impl CyclingTarget {
    pub fn n_cycles(&self) -> usize {
        self.target.capacities.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Traces(Vec<ProtocolTarget>),
    Cycling(CyclingTarget),
}

/// A fully loaded calibration problem. `params` holds the starting point.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTask {
    pub id: String,
    pub params: ModelParameters,
    pub search_keys: Vec<String>,
    pub target: Target,
}

/// Outcome of scoring one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub feedback: FeedbackPackage,
    pub simulator_s: f64,
}

impl CalibrationTask {
    /// Single-protocol task from a benchmark manifest, starting at `theta_init`.
    pub fn from_manifest(manifest: &BenchmarkManifest, dir: &Path, id: &str) -> Result<Self, RunError> {
        let task = manifest.task(id).ok_or_else(|| RunError::Task(format!("no task `{id}` in manifest")))?;
        let mut cell = manifest.base_params(task)?.clone();
        for (k, v) in &task.theta_init {
            cell.set(k, *v)?;
        }
        let trace = load_target(dir, task)?;
        Ok(Self {
            id: task.id.clone(),
            params: ModelParameters::new(cell, None),
            search_keys: task.search_keys.clone(),
            target: Target::Traces(vec![ProtocolTarget { protocol: task.protocol.clone(), trace }]),
        })
    }

    pub fn theta(&self) -> Result<BTreeMap<String, f64>, RunError> {
        Ok(self.params.subset(&self.search_keys)?)
    }

    pub fn protocols(&self) -> Vec<&Protocol> {
        match &self.target {
            Target::Traces(t) => t.iter().map(|p| &p.protocol).collect(),
            Target::Cycling(c) => vec![&c.protocol],
        }
    }

    pub fn prompt_inputs(&self) -> PromptInputs {
        let protocols = self
            .protocols()
            .iter()
            .map(|p| format!("{}: {}", p.name, serde_json::to_string(&p.steps).unwrap_or_default()))
            .collect::<Vec<_>>()
            .join("; ");
        let cycle_idxs = match &self.target {
            Target::Cycling(c) => Some(c.target.cycle_traces.keys().copied().collect()),
            Target::Traces(_) => None,
        };
        PromptInputs {
            protocols,
            parameter_set: self.params.cell.name.clone(),
            model_name: MODEL_NAME.to_string(),
            search_keys: self.search_keys.clone(),
            cycle_idxs,
        }
    }

    /// Simulates `params` against every target and scores the result. Only
    /// I/O problems are errors; a parameter set the simulator refuses is
    /// scored as a failed round.
    pub fn evaluate(
        &self,
        params: &ModelParameters,
        loss: &LossConfig,
        round: usize,
        visual: Option<&Path>,
    ) -> Result<Scored, RunError> {
        let theta = params.subset(&self.search_keys)?;
        let mut simulator_s = 0.0;
        let feedback = match &self.target {
            Target::Traces(targets) => {
                let mut packages = Vec::with_capacity(targets.len());
                for (i, t) in targets.iter().enumerate() {
                    let start = Instant::now();
                    let sim = run_protocol(&params.cell, &t.protocol, params.degradation.as_ref(), None);
                    simulator_s += start.elapsed().as_secs_f64();
                    let path = visual.map(|v| protocol_visual_path(v, i, targets.len()));
                    packages.push(match sim {
                        Ok(sim) => build_feedback(&sim, &t.trace, &t.protocol, loss, round, path.as_deref())?,
                        Err(e) => {
                            let mut fb = invalid(round, &t.protocol, &e.to_string());
                            if let Some(path) = path {
                                render_failed(&t.trace, &e.to_string(), &path).map_err(|e| RunError::io(&path, e))?;
                                fb.visual = Some(path.display().to_string());
                            }
                            fb
                        }
                    });
                }
                combine(packages, loss, &theta, round)
            }
            Target::Cycling(c) => {
                let start = Instant::now();
                let sim = run_cycles(&params.cell, params.degradation.as_ref(), &c.protocol, c.n_cycles());
                simulator_s += start.elapsed().as_secs_f64();
                match sim {
                    Ok(series) => {
                        let mut fb = build_degradation_feedback(&series, &c.target, &c.protocol, loss, round, visual)?;
                        let name = c.protocol.name.clone();
                        fb.residuals.total_mape = loss.objective(&[(name, fb.residuals.total_mape)], &theta);
                        fb
                    }
                    Err(e) => invalid(round, &c.protocol, &e.to_string()),
                }
            }
        };
        Ok(Scored { feedback, simulator_s })
    }
}

fn protocol_visual_path(base: &Path, index: usize, count: usize) -> PathBuf {
    if count <= 1 {
        return base.to_path_buf();
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "overlay".into());
    base.with_file_name(format!("{stem}_p{index}.svg"))
}

fn invalid(round: usize, protocol: &Protocol, message: &str) -> FeedbackPackage {
    log::warn!("round {round}: simulator rejected parameters: {message}");
    FeedbackPackage {
        residuals: ResidualSet::failed(),
        features: FeatureSet::default(),
        visual: None,
        events: vec![INVALID_PARAMETERS_EVENT.to_string()],
        round,
        protocol: Some(protocol.name.clone()),
        cycles: None,
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// One package per round. With several protocols the channels are averaged,
/// the total is the loss objective and features come from the first protocol.
fn combine(mut packages: Vec<FeedbackPackage>, loss: &LossConfig, theta: &BTreeMap<String, f64>, round: usize) -> FeedbackPackage {
    let per: Vec<(String, f64)> = packages
        .iter()
        .map(|p| (p.protocol.clone().unwrap_or_default(), p.residuals.total_mape))
        .collect();
    let total = loss.objective(&per, theta);
    if packages.len() == 1 {
        let mut p = packages.pop().expect("one package");
        p.residuals.total_mape = total;
        return p;
    }
    let all_ok = packages.iter().all(FeedbackPackage::succeeded);
    let events = if all_ok {
        vec![SUCCESS_EVENT.to_string()]
    } else {
        packages
            .iter()
            .flat_map(|p| {
                let name = p.protocol.clone().unwrap_or_default();
                p.events.iter().filter(|e| *e != SUCCESS_EVENT).map(move |e| format!("{name}:{e}")).collect::<Vec<_>>()
            })
            .collect()
    };
    let residuals = ResidualSet {
        capacity_mape: mean_of(packages.iter().map(|p| p.residuals.capacity_mape)),
        voltage_rmse: mean_of(packages.iter().map(|p| p.residuals.voltage_rmse)),
        voltage_mape: mean_of(packages.iter().map(|p| p.residuals.voltage_mape)),
        current_mape: mean_of(packages.iter().map(|p| p.residuals.current_mape)),
        total_mape: total,
    };
    let first = packages.swap_remove(0);
    FeedbackPackage {
        residuals,
        features: first.features,
        visual: first.visual,
        events,
        round,
        protocol: None,
        cycles: None,
    }
}

/// On-disk task description; relative paths resolve against the file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFile {
    pub id: String,
    /// Cell parameter JSON; the bundled set when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<PathBuf>,
    /// Degradation parameter JSON; `"default"` selects the bundled set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degradation: Option<PathBuf>,
    pub search_keys: Vec<String>,
    #[serde(default)]
    pub theta_init: BTreeMap<String, f64>,
    #[serde(default)]
    pub targets: Vec<TraceTargetFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycling: Option<CyclingTargetFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceTargetFile {
    pub protocol: PathBuf,
    /// A trace CSV in the simulator's format, or any cycler export when
    /// `columns` is given.
    pub trace: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub columns: Option<crate::dataio::ColumnMap>,
    /// Inclusive 1-based cycle range to keep from a cycler export.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycles: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CyclingTargetFile {
    pub protocol: PathBuf,
    /// JSON-serialized [`DegradationTarget`].
    pub target: PathBuf,
}

impl TaskFile {
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| RunError::Task(format!("{}: {e}", path.display())))
    }

    pub fn resolve(&self, dir: &Path) -> Result<CalibrationTask, RunError> {
        let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { dir.join(p) };
        let mut cell = match &self.params {
            Some(p) => PhysicalParameterSet::load(&at(p))?,
            None => PhysicalParameterSet::default_set(),
        };
        let degradation = match &self.degradation {
            Some(p) if p.as_os_str() == "default" => Some(DegradationParameterSet::default_set()),
            Some(p) => Some(DegradationParameterSet::load(&at(p))?),
            None => None,
        };
        if self.cycling.is_some() && degradation.is_none() {
            return Err(RunError::Task("a cycling target needs degradation parameters".into()));
        }
        for (k, v) in &self.theta_init {
            if cell.parameters.contains(k) {
                cell.set(k, *v)?;
            }
        }
        let mut params = ModelParameters::new(cell, degradation);
        params.assign(&self.theta_init)?;
        let target = match (&self.cycling, self.targets.is_empty()) {
            (Some(c), true) => {
                let protocol = Protocol::load(&at(&c.protocol))?;
                let p = at(&c.target);
                let text = std::fs::read_to_string(&p).map_err(|e| RunError::io(&p, e))?;
                let target = serde_json::from_str(&text).map_err(|e| RunError::Task(format!("{}: {e}", p.display())))?;
                Target::Cycling(CyclingTarget { protocol, target })
            }
            (None, false) => {
                let mut out = Vec::new();
                for t in &self.targets {
                    let protocol = Protocol::load(&at(&t.protocol))?;
                    let path = at(&t.trace);
                    let trace = match &t.columns {
                        None => SimulationTrace::load_csv(&path)?,
                        Some(map) => crate::dataio::load_trace(&path, map, t.cycles)?,
                    };
                    out.push(ProtocolTarget { protocol, trace });
                }
                Target::Traces(out)
            }
            _ => return Err(RunError::Task("give either `targets` or `cycling`, not both or neither".into())),
        };
        let task = CalibrationTask { id: self.id.clone(), params, search_keys: self.search_keys.clone(), target };
        task.theta()?;
        Ok(task)
    }
}
