//! The closed calibration loop: warm-up, propose/simulate rounds, run logs,
//! replay and batch execution.

mod batch;
mod replay;
mod task;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{batch_run, run_suite, Job, TaskOutcome, TaskSource};
pub use replay::{read_rounds, replay, replay_dir, ReplayReport};
pub use task::{
    CalibrationTask, CyclingTarget, CyclingTargetFile, ProtocolTarget, Scored, Target, TaskFile, TraceTargetFile,
    INVALID_PARAMETERS_EVENT, MODEL_NAME,
};

use crate::feedback::{FeatureSet, FeedbackError, FeedbackPackage, LossConfig, ResidualSet};
use crate::memory::{
    knowledge_rules, summarize_warmup, BestSoFar, KnowledgeEntry, KnowledgeKind, MemoryError, MemoryLog, MemoryStore,
    RoundRecord, DEGRADATION_KNOWLEDGE, PHYSICAL_KNOWLEDGE,
};
use crate::params::{ModelParameters, ParamError};
use crate::proposer::{
    apply_update, build_proposer, ChatExchange, Directive, Evaluation, ParameterUpdate, ProposalContext, Proposer,
    ProposerConfig, ProposerError, ProposerKind, SearchSpace, UpdateError,
};
use crate::seed;

pub const PROPOSER_ERROR_EVENT: &str = "proposer_error";
pub const UPDATE_REJECTED_EVENT: &str = "update_rejected";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("task: {0}")]
    Task(String),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Bench(#[from] crate::bench::BenchError),
    #[error(transparent)]
    Trace(#[from] crate::sim::TraceError),
    #[error(transparent)]
    Protocol(#[from] crate::sim::ProtocolError),
    #[error(transparent)]
    Data(#[from] crate::dataio::DataError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Proposer(#[from] ProposerError),
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl RunError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        RunError::Io { path: path.display().to_string(), source }
    }

    pub(crate) fn json(path: &Path, source: serde_json::Error) -> Self {
        RunError::Json { path: path.display().to_string(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceConfig {
    /// Rounds over which the best total must keep improving.
    pub window: usize,
    /// Minimum improvement over the window, in percentage points.
    pub epsilon: f64,
    /// A best total below this (in %) ends the run at once.
    pub floor: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self { window: 10, epsilon: 0.1, floor: 0.01 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Show the proposer only the total MAPE.
    pub scalar_only_feedback: bool,
    /// Give the proposer no memory context.
    pub no_memory: bool,
    /// Start without injected domain rules.
    pub no_knowledge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub proposer: ProposerConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default = "defaults::warmup_rounds")]
    pub warmup_rounds: usize,
    /// Budget of evaluated rounds, the starting point included.
    #[serde(default = "defaults::rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ablation: Ablation,
    /// Token budget for the rendered memory.
    #[serde(default = "defaults::context_tokens")]
    pub context_tokens: usize,
    /// Half-width of the fixed warm-up perturbations, as a fraction.
    #[serde(default = "defaults::warmup_spread")]
    pub warmup_spread: f64,
    /// Write an overlay picture per round.
    #[serde(default = "defaults::plots")]
    pub plots: bool,
}

mod defaults {
    pub fn warmup_rounds() -> usize {
        20
    }
    pub fn rounds() -> usize {
        80
    }
    pub fn context_tokens() -> usize {
        4000
    }
    pub fn warmup_spread() -> f64 {
        0.2
    }
    pub fn plots() -> bool {
        true
    }
}

impl RunConfig {
    pub fn new(proposer: ProposerConfig) -> Self {
        Self {
            proposer,
            loss: LossConfig::default(),
            warmup_rounds: defaults::warmup_rounds(),
            rounds: defaults::rounds(),
            convergence: ConvergenceConfig::default(),
            seed: 0,
            ablation: Ablation::default(),
            context_tokens: defaults::context_tokens(),
            warmup_spread: defaults::warmup_spread(),
            plots: defaults::plots(),
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.rounds == 0 {
            return Err(RunError::Config("rounds must be at least 1".into()));
        }
        if !(self.warmup_spread > 0.0 && self.warmup_spread < 1.0) {
            return Err(RunError::Config("warmup_spread must lie in (0, 1)".into()));
        }
        if self.convergence.window == 0 {
            return Err(RunError::Config("convergence window must be at least 1".into()));
        }
        self.loss.validate().map_err(|e| RunError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    BudgetExhausted,
    Aborted,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub simulator_s: f64,
    pub proposer_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub task_id: String,
    pub proposer: ProposerKind,
    pub seed: u64,
    pub termination: Termination,
    pub rounds_completed: usize,
    pub warmup_evaluations: usize,
    /// `None` when no round simulated successfully.
    pub best: Option<BestSoFar>,
    /// Residuals of the best round.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_residuals: Option<ResidualSet>,
    pub initial_total_mape: f64,
    pub timings: Timings,
}

impl RunResult {
    pub fn best_total_mape(&self) -> f64 {
        self.best.as_ref().map_or(crate::feedback::FAILED_TOTAL_MAPE, |b| b.total_mape)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| RunError::json(path, e))
    }
}

/// Header written to `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub task_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<TaskSource>,
    pub search_keys: Vec<String>,
    pub theta_init: BTreeMap<String, f64>,
    pub config: RunConfig,
    pub version: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Optimize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundTimings {
    pub simulator_s: f64,
    pub proposer_s: f64,
}

/// One line of `rounds.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub phase: Phase,
    pub round: usize,
    /// Search-key values that were simulated.
    pub params: BTreeMap<String, f64>,
    pub residuals: ResidualSet,
    pub features: FeatureSet,
    /// Simulation outcome events.
    pub events: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposed: Option<ParameterUpdate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    /// Events raised while turning the previous proposal into `params`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub update_events: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    pub timings: RoundTimings,
}

/// True once the best successful total has stalled: it is below
/// `cfg.floor`, or it improved by less than `cfg.epsilon` points over the
/// last `cfg.window` rounds. `totals` has one entry per round, `None` for
/// failed rounds.
pub fn check_convergence(totals: &[Option<f64>], cfg: &ConvergenceConfig) -> bool {
    let mut best = Vec::with_capacity(totals.len());
    let mut b = f64::INFINITY;
    for t in totals {
        if let Some(v) = t {
            b = b.min(*v);
        }
        best.push(b);
    }
    let Some(&last) = best.last() else { return false };
    if last < cfg.floor {
        return true;
    }
    let n = best.len();
    if n < cfg.window {
        return false;
    }
    let then = best[n - cfg.window];
    then.is_finite() && then - last < cfg.epsilon
}

/// Fixed warm-up perturbation `k` (1-based): every key scaled by an
/// independent factor drawn uniformly from `[1 - spread, 1 + spread]`.
pub fn fixed_perturbation(keys: &[String], spread: f64, seed: u64, k: usize) -> ParameterUpdate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &format!("warmup/{k}")));
    let params = keys
        .iter()
        .map(|key| (key.clone(), Directive::Multiplicative(1.0 + spread * (2.0 * rng.gen::<f64>() - 1.0))))
        .collect();
    ParameterUpdate { params, rationale: None }
}

struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlWriter {
    fn create(path: PathBuf) -> Result<Self, RunError> {
        let file = File::create(&path).map_err(|e| RunError::io(&path, e))?;
        Ok(Self { path, out: BufWriter::new(file) })
    }

    fn line<T: Serialize>(&mut self, value: &T) -> Result<(), RunError> {
        let text = serde_json::to_string(value).map_err(|e| RunError::json(&self.path, e))?;
        writeln!(self.out, "{text}")
            .and_then(|_| self.out.flush())
            .map_err(|e| RunError::io(&self.path, e))
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| RunError::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| RunError::io(path, e))
}

/// Files of a run directory.
pub mod files {
    pub const RUN: &str = "run.json";
    pub const MEMORY: &str = "memory.jsonl";
    pub const ROUNDS: &str = "rounds.jsonl";
    pub const BEST: &str = "best.json";
    pub const EXCHANGES: &str = "exchanges.jsonl";
    pub const RESULT: &str = "result.json";
    pub const PLOTS: &str = "plots";
}

struct Logs {
    rounds: JsonlWriter,
    exchanges: JsonlWriter,
    memory: MemoryLog,
    pending: Vec<ChatExchange>,
}

impl Logs {
    fn flush_exchanges(&mut self) -> Result<(), RunError> {
        for ex in std::mem::take(&mut self.pending) {
            self.exchanges.line(&ex)?;
        }
        Ok(())
    }
}

/// Runs one calibration with an already built proposer, logging into `run_dir`.
pub struct Calibration<'a> {
    pub task: &'a CalibrationTask,
    pub config: &'a RunConfig,
    pub run_dir: &'a Path,
    pub source: Option<TaskSource>,
    pub cancel: Option<&'a AtomicBool>,
}

impl Calibration<'_> {
    fn cancelled(&self) -> bool {
        self.cancel.is_some_and(|c| c.load(Ordering::SeqCst))
    }

    fn plot_path(&self, round: usize) -> Option<PathBuf> {
        self.config.plots.then(|| self.run_dir.join(files::PLOTS).join(format!("round_{round}.svg")))
    }

    fn initial_memory(&self) -> MemoryStore {
        if self.config.ablation.no_knowledge {
            return MemoryStore::new();
        }
        let (corpus, source) = match self.task.target {
            Target::Cycling(_) => (DEGRADATION_KNOWLEDGE, "degradation-rules"),
            Target::Traces(_) => (PHYSICAL_KNOWLEDGE, "physical-rules"),
        };
        MemoryStore::init_with_knowledge(&knowledge_rules(corpus), source)
    }

    pub fn run(&self, proposer: &mut dyn Proposer) -> Result<RunResult, RunError> {
        let started = Instant::now();
        let cfg = self.config;
        let task = self.task;
        cfg.validate()?;
        std::fs::create_dir_all(self.run_dir).map_err(|e| RunError::io(self.run_dir, e))?;
        if cfg.plots {
            let plots = self.run_dir.join(files::PLOTS);
            std::fs::create_dir_all(&plots).map_err(|e| RunError::io(&plots, e))?;
        }
        let theta_init = task.theta()?;
        write_json(
            &self.run_dir.join(files::RUN),
            &RunManifest {
                task_id: task.id.clone(),
                source: self.source.clone(),
                search_keys: task.search_keys.clone(),
                theta_init: theta_init.clone(),
                config: cfg.clone(),
                version: env!("CARGO_PKG_VERSION").to_string(),
            },
        )?;
        let mut memory = self.initial_memory();
        let mut logs = Logs {
            rounds: JsonlWriter::create(self.run_dir.join(files::ROUNDS))?,
            exchanges: JsonlWriter::create(self.run_dir.join(files::EXCHANGES))?,
            memory: MemoryLog::create(&self.run_dir.join(files::MEMORY), &memory)?,
            pending: Vec::new(),
        };
        let prompt = task.prompt_inputs();
        let mut timings = Timings::default();
        let mut history: Vec<Evaluation> = Vec::new();

        let baseline = task.evaluate(&task.params, &cfg.loss, 1, self.plot_path(1).as_deref())?;
        timings.simulator_s += baseline.simulator_s;
        let initial_total = baseline.feedback.residuals.total_mape;
        history.push(Evaluation { theta: theta_init.clone(), total_mape: initial_total });

        let mut termination = None;
        let mut warmup_evaluations = 0;
        if cfg.warmup_rounds > 0 {
            let outcome = self.warmup(proposer, &baseline.feedback, &theta_init, &mut memory, &mut logs, &mut timings, &mut history)?;
            warmup_evaluations = outcome.evaluated;
            if outcome.aborted {
                termination = Some(Termination::Aborted);
            }
        }

        let mut params = task.params.clone();
        let mut step = cfg.proposer.step_size();
        let mut totals: Vec<Option<f64>> = Vec::new();
        let mut previous_ok: Option<f64> = None;
        let mut update_events: Vec<String> = Vec::new();
        let mut scored = Some(baseline);
        let mut round = 0;
        while termination.is_none() {
            round += 1;
            if self.cancelled() {
                termination = Some(Termination::Aborted);
                break;
            }
            let s = match scored.take() {
                Some(s) => s,
                None => task.evaluate(&params, &cfg.loss, round, self.plot_path(round).as_deref())?,
            };
            timings.simulator_s += s.simulator_s;
            let fb = s.feedback;
            let theta = params.subset(&task.search_keys)?;
            let ok = fb.succeeded();
            let total = fb.residuals.total_mape;
            let eta = step.eta();
            let mut events = fb.events.clone();
            events.extend(update_events.iter().cloned());
            memory.record_round(RoundRecord {
                round,
                proposed: None,
                theta: theta.clone(),
                residuals: fb.residuals.clone(),
                features: fb.features.clone(),
                events,
                rationale: None,
                step_size: Some(eta),
            })?;
            step.observe(previous_ok, total, ok);
            if ok {
                previous_ok = Some(total);
            }
            if round > 1 {
                history.push(Evaluation { theta: theta.clone(), total_mape: total });
            }
            totals.push(ok.then_some(total));
            log::info!(
                "{} round {round}: total {} best {}",
                task.id,
                if ok { format!("{total:.4}%") } else { fb.events.join(",") },
                memory.best.as_ref().map_or("-".to_string(), |b| format!("{:.4}%", b.total_mape))
            );
            if let Some(b) = &memory.best {
                write_json(&self.run_dir.join(files::BEST), b)?;
            }
            let mut line = RoundLog {
                phase: Phase::Optimize,
                round,
                params: theta.clone(),
                residuals: fb.residuals.clone(),
                features: fb.features.clone(),
                events: fb.events.clone(),
                proposed: None,
                rationale: None,
                update_events: std::mem::take(&mut update_events),
                step_size: Some(eta),
                timings: RoundTimings { simulator_s: s.simulator_s, proposer_s: 0.0 },
            };
            if check_convergence(&totals, &cfg.convergence) {
                termination = Some(Termination::Converged);
            } else if round >= cfg.rounds {
                termination = Some(Termination::BudgetExhausted);
            } else {
                let memory_text = if cfg.ablation.no_memory { String::new() } else { memory.render_context(cfg.context_tokens) };
                let knowledge: Vec<String> = memory.entries(KnowledgeKind::Injected).map(|e| e.text.clone()).collect();
                let ctx = ProposalContext {
                    round,
                    theta: &theta,
                    feedback: &fb,
                    memory: &memory_text,
                    history: &history,
                    knowledge: &knowledge,
                    prompt: &prompt,
                    scalar_only: cfg.ablation.scalar_only_feedback,
                };
                let t0 = Instant::now();
                let proposal = proposer.propose(&ctx, &mut logs.pending);
                let dt = t0.elapsed().as_secs_f64();
                timings.proposer_s += dt;
                line.timings.proposer_s = dt;
                logs.flush_exchanges()?;
                match proposal {
                    Ok(u) => {
                        match self.apply(&params, &u, eta) {
                            Ok((next, ev)) => {
                                params = next;
                                update_events = ev;
                            }
                            Err(e) => {
                                log::warn!("round {round}: update rejected: {e}");
                                update_events = vec![format!("{UPDATE_REJECTED_EVENT}: {e}")];
                            }
                        }
                        line.rationale = u.rationale.clone();
                        memory.annotate_last(Some(u.clone()), u.rationale.clone());
                        line.proposed = Some(u);
                    }
                    Err(e @ (ProposerError::Exhausted { .. } | ProposerError::Parse(_) | ProposerError::Transport(_))) => {
                        log::warn!("round {round}: no proposal: {e}");
                        update_events = vec![format!("{PROPOSER_ERROR_EVENT}: {e}")];
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            logs.rounds.line(&line)?;
            if let Some(r) = memory.records.last() {
                logs.memory.round(r)?;
            }
        }
        logs.flush_exchanges()?;
        timings.total_s = started.elapsed().as_secs_f64();
        let best_residuals = memory
            .best
            .as_ref()
            .and_then(|b| memory.records.iter().find(|r| r.round == b.round))
            .map(|r| r.residuals.clone());
        let result = RunResult {
            task_id: task.id.clone(),
            proposer: proposer.kind(),
            seed: cfg.seed,
            termination: termination.expect("loop sets termination"),
            rounds_completed: memory.last_round(),
            warmup_evaluations,
            best: memory.best.clone(),
            best_residuals,
            initial_total_mape: initial_total,
            timings,
        };
        write_json(&self.run_dir.join(files::RESULT), &result)?;
        Ok(result)
    }

    /// Applies `u` after checking it only touches search keys.
    fn apply(&self, params: &ModelParameters, u: &ParameterUpdate, eta: f64) -> Result<(ModelParameters, Vec<String>), UpdateError> {
        let outside: Vec<String> =
            u.params.keys().filter(|k| !self.task.search_keys.contains(k)).cloned().collect();
        if !outside.is_empty() {
            return Err(UpdateError::RejectedKeys(outside));
        }
        apply_update(params, u, eta)
    }

    #[allow(clippy::too_many_arguments)]
    fn warmup(
        &self,
        proposer: &mut dyn Proposer,
        baseline: &FeedbackPackage,
        theta_init: &BTreeMap<String, f64>,
        memory: &mut MemoryStore,
        logs: &mut Logs,
        timings: &mut Timings,
        history: &mut Vec<Evaluation>,
    ) -> Result<WarmupOutcome, RunError> {
        let cfg = self.config;
        let task = self.task;
        let n = cfg.warmup_rounds;
        let prompt = task.prompt_inputs();
        let t0 = Instant::now();
        let suggested = proposer.warmup(theta_init, &prompt, n, &mut logs.pending);
        timings.proposer_s += t0.elapsed().as_secs_f64();
        logs.flush_exchanges()?;
        let mut batch = match suggested {
            Some(Ok(b)) => b,
            Some(Err(e)) => {
                log::warn!("warm-up suggestions unavailable ({e}); using fixed perturbations");
                Vec::new()
            }
            None => Vec::new(),
        };
        batch.truncate(n);
        let mut fixed_k = 0;
        while batch.len() < n {
            fixed_k += 1;
            batch.push(fixed_perturbation(&task.search_keys, cfg.warmup_spread, cfg.seed, fixed_k));
        }

        let mut outcome = WarmupOutcome::default();
        for (i, u) in batch.into_iter().enumerate() {
            if self.cancelled() {
                outcome.aborted = true;
                return Ok(outcome);
            }
            let k = i + 1;
            let (params, update_events) = match self.apply(&task.params, &u, 1.0) {
                Ok(x) => x,
                Err(e) => {
                    log::warn!("warm-up {k}: skipped ({e})");
                    continue;
                }
            };
            let s = task.evaluate(&params, &cfg.loss, k, None)?;
            timings.simulator_s += s.simulator_s;
            let theta = params.subset(&task.search_keys)?;
            let fb = &s.feedback;
            history.push(Evaluation { theta: theta.clone(), total_mape: fb.residuals.total_mape });
            let record = RoundRecord {
                round: k,
                proposed: Some(u.clone()),
                theta: theta.clone(),
                residuals: fb.residuals.clone(),
                features: fb.features.clone(),
                events: fb.events.clone(),
                rationale: u.rationale.clone(),
                step_size: None,
            };
            logs.rounds.line(&RoundLog {
                phase: Phase::Warmup,
                round: k,
                params: theta,
                residuals: fb.residuals.clone(),
                features: fb.features.clone(),
                events: fb.events.clone(),
                proposed: Some(u),
                rationale: None,
                update_events,
                step_size: None,
                timings: RoundTimings { simulator_s: s.simulator_s, proposer_s: 0.0 },
            })?;
            logs.memory.warmup(&record)?;
            memory.record_warmup(record);
            outcome.evaluated += 1;
        }

        let base_record = RoundRecord {
            round: 0,
            proposed: None,
            theta: theta_init.clone(),
            residuals: baseline.residuals.clone(),
            features: baseline.features.clone(),
            events: baseline.events.clone(),
            rationale: None,
            step_size: None,
        };
        let mut listing = vec![format!("unperturbed: {}", base_record.summary_line())];
        listing.extend(memory.warmup.iter().map(|r| format!("exploration {}", r.summary_line())));
        let t0 = Instant::now();
        let distilled = proposer.summarize(&listing.join("\n"), &prompt, &mut logs.pending);
        timings.proposer_s += t0.elapsed().as_secs_f64();
        logs.flush_exchanges()?;
        let entries = match distilled {
            Some(Ok(rules)) if !rules.is_empty() => {
                rules.into_iter().map(|r| KnowledgeEntry::learned(r, "warmup-summary", None, 1.0)).collect()
            }
            other => {
                if let Some(Err(e)) = other {
                    log::warn!("warm-up summary unavailable ({e}); using the built-in summary");
                }
                summarize_warmup(theta_init, Some(&base_record), &memory.warmup)
            }
        };
        for e in entries {
            if memory.add_knowledge(e.clone()) {
                logs.memory.knowledge(&e)?;
            }
        }
        Ok(outcome)
    }
}

#[derive(Debug, Default)]
struct WarmupOutcome {
    evaluated: usize,
    aborted: bool,
}

/// Builds the configured proposer for `task` and runs it.
pub fn calibrate(
    task: &CalibrationTask,
    cfg: &RunConfig,
    run_dir: &Path,
    source: Option<TaskSource>,
    cancel: Option<&AtomicBool>,
) -> Result<RunResult, RunError> {
    let space = SearchSpace::from_params(&task.params, &task.search_keys)?;
    let mut pcfg = cfg.proposer.clone();
    if matches!(task.target, Target::Cycling(_)) {
        pcfg.llm.degradation = true;
    }
    let mut proposer = build_proposer(&pcfg, &space, cfg.seed)?;
    Calibration { task, config: cfg, run_dir, source, cancel }.run(proposer.as_mut())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv() -> ConvergenceConfig {
        ConvergenceConfig::default()
    }

    #[test]
    fn convergence_examples() {
        assert!(check_convergence(&[Some(5.0); 10], &conv()));
        assert!(!check_convergence(&[Some(5.0); 9], &conv()));
        let falling: Vec<Option<f64>> = (0..20).map(|i| Some(20.0 - i as f64)).collect();
        assert!(!check_convergence(&falling, &conv()));
        assert!(check_convergence(&[Some(3.0), Some(0.005)], &conv()));
        assert!(!check_convergence(&[None, None], &conv()));
        assert!(!check_convergence(&[], &conv()));
    }

    #[test]
    fn failures_do_not_reset_the_best() {
        let mut h = vec![Some(2.0)];
        h.extend(std::iter::repeat(None).take(9));
        assert!(check_convergence(&h, &conv()));
        let mut h = vec![None; 9];
        h.push(Some(2.0));
        assert!(!check_convergence(&h, &conv()), "no finite best at the start of the window");
    }

    #[test]
    fn small_improvement_over_window_converges() {
        let h: Vec<Option<f64>> = (0..10).map(|i| Some(1.0 - 0.01 * i as f64)).collect();
        assert!(check_convergence(&h, &conv()));
    }

    #[test]
    fn fixed_perturbations_are_bounded_and_seeded() {
        let keys = vec!["a".to_string(), "b".to_string()];
        let u = fixed_perturbation(&keys, 0.2, 7, 3);
        for d in u.params.values() {
            match d {
                Directive::Multiplicative(f) => assert!((0.8..=1.2).contains(f)),
                other => panic!("{other:?}"),
            }
        }
        assert_eq!(u, fixed_perturbation(&keys, 0.2, 7, 3));
        assert_ne!(u, fixed_perturbation(&keys, 0.2, 7, 4));
    }

    #[test]
    fn config_round_trips_with_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"proposer": {"kind": "bo"}}"#).unwrap();
        assert_eq!(cfg.rounds, 80);
        assert_eq!(cfg.warmup_rounds, 20);
        assert_eq!(cfg.convergence, ConvergenceConfig::default());
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
