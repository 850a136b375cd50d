use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use cellfit::bench::{generate_manifest, task_protocol, BenchConfig, Mode};
use cellfit::eval::{aggregate_report, collect_results, LabelledResult, SuiteReport};
use cellfit::orchestrator::{
    calibrate, files, read_rounds, replay_dir, run_suite, CalibrationTask, Phase, RunConfig, RunError, RunManifest,
    TaskOutcome, TaskSource, Termination,
};
use cellfit::memory::BestSoFar;
use cellfit::params::{DegradationParameterSet, PhysicalParameterSet};
use cellfit::proposer::{ProposerConfig, ProposerError, ProposerKind};
use cellfit::sim::{run_cycles, run_protocol, Protocol};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_ABORTED: u8 = 3;

const ENV_HELP: &str = "\
Configuration precedence: command-line flags, then environment, then the --config file.

Environment:
  CELLFIT_LLM_BASE_URL   chat endpoint for --proposer llm
  CELLFIT_LLM_MODEL      model name sent to the endpoint
  CELLFIT_LLM_API_KEY    bearer token (the variable name is llm.api_key_env in the config file)
  RUST_LOG               log filter, default info

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error, 3 aborted by Ctrl-C.";

/// Calibrates battery model parameters against measured or synthetic traces.
#[derive(Parser)]
#[command(name = "cellfit", version, after_help = ENV_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark suite: manifest.json plus target traces.
    GenBench(GenBench),
    /// Run one protocol (or a number of cycles) and write the trace.
    Simulate(Simulate),
    /// Calibrate a single task.
    Calibrate(Calibrate),
    /// Calibrate every task of a manifest.
    RunSuite(RunSuite),
    /// Aggregate results into a report.
    Evaluate(Evaluate),
    /// Re-simulate a finished run and compare with its logs.
    Replay(Replay),
    /// Redraw the overlay picture of one round.
    Plot(Plot),
}

#[derive(Args)]
struct GenBench {
    /// Base parameter sets: `default` or JSON files.
    #[arg(long, value_delimiter = ',', default_value = "default")]
    bases: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0.2,1,2")]
    c_rates: Vec<f64>,
    /// Perturbation modes: extreme, regular.
    #[arg(long, value_delimiter = ',', default_value = "extreme,regular", value_parser = parse_mode)]
    modes: Vec<Mode>,
    /// Tasks kept per mode.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Simulate {
    /// Parameter set JSON; the bundled default if omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Protocol JSON.
    #[arg(long, conflicts_with = "c_rate")]
    protocol: Option<PathBuf>,
    /// CC-CV protocol at this C-rate, used when no protocol file is given.
    #[arg(long, default_value_t = 1.0)]
    c_rate: f64,
    /// Degradation parameters: `default` or a JSON file.
    #[arg(long)]
    degradation: Option<String>,
    /// Repeat the protocol this many times and write per-cycle summaries.
    #[arg(long)]
    cycles: Option<usize>,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone, Default)]
struct RunFlags {
    /// llm, bo, random, sobol, scripted or cmaes-stub.
    #[arg(long, value_parser = parse_kind)]
    proposer: Option<ProposerKind>,
    /// Run configuration JSON; any subset of the run settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Evaluation budget, the starting point included.
    #[arg(long)]
    rounds: Option<usize>,
    /// Warm-up evaluations; 0 by default for non-LLM proposers.
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Disable a component: no_memory, no_knowledge, scalar_only_feedback.
    #[arg(long, value_parser = ["no_memory", "no_knowledge", "scalar_only_feedback"])]
    ablate: Vec<String>,
    /// JSONL of updates for the scripted proposer.
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long, env = "CELLFIT_LLM_BASE_URL")]
    llm_base_url: Option<String>,
    #[arg(long, env = "CELLFIT_LLM_MODEL")]
    llm_model: Option<String>,
    /// Skip the per-round overlay pictures.
    #[arg(long)]
    no_plots: bool,
}

#[derive(Args)]
struct Calibrate {
    /// Task file (JSON).
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    task: Option<PathBuf>,
    /// Benchmark manifest; use with --id.
    #[arg(long, requires = "id")]
    manifest: Option<PathBuf>,
    /// Task id within the manifest.
    #[arg(long)]
    id: Option<String>,
    /// Run directory; runs/<task id> by default.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args)]
struct RunSuite {
    #[arg(long)]
    manifest: PathBuf,
    /// Results root; one directory per task.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    parallel: u64,
    /// Only these task ids.
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args)]
struct Evaluate {
    /// Results root: task directories, or one directory per method.
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Where report.csv and report.txt go; the results root by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Replay {
    #[arg(long)]
    run_dir: PathBuf,
}

#[derive(Args)]
struct Plot {
    #[arg(long)]
    run_dir: PathBuf,
    /// Round to draw; the best round by default.
    #[arg(long)]
    round: Option<usize>,
    /// Draw a warm-up evaluation instead of an optimization round.
    #[arg(long)]
    warmup: bool,
    /// Output SVG; <run-dir>/plots/replot_<round>.svg by default.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Failure(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(_) | RunError::Proposer(ProposerError::Config(_)) => CliError::Usage(e.to_string()),
            e => CliError::Failure(e.to_string()),
        }
    }
}

fn failure(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "extreme" => Ok(Mode::Extreme),
        "regular" => Ok(Mode::Regular),
        other => Err(format!("unknown mode `{other}`")),
    }
}

fn parse_kind(s: &str) -> Result<ProposerKind, String> {
    s.parse()
}

fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

/// Recursively overlays `top` onto `base`; objects merge, anything else
/// replaces.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set(v: &mut Value, path: &[&str], x: Value) {
    let mut cur = v;
    for key in &path[..path.len() - 1] {
        cur = cur
            .as_object_mut()
            .expect("config is an object")
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    cur.as_object_mut().expect("config is an object").insert(path[path.len() - 1].to_string(), x);
}

/// Defaults, then the config file, then environment and flags.
fn run_config(flags: &RunFlags) -> Result<RunConfig, CliError> {
    let mut v = serde_json::to_value(RunConfig::new(ProposerConfig::new(ProposerKind::Random))).expect("serializable");
    let mut file_sets_warmup = false;
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let file: Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        if !file.is_object() {
            return Err(usage(format!("{}: expected a JSON object", path.display())));
        }
        file_sets_warmup = file.get("warmup_rounds").is_some();
        merge(&mut v, file);
    }
    if let Some(k) = flags.proposer {
        set(&mut v, &["proposer", "kind"], serde_json::to_value(k).expect("serializable"));
    }
    if let Some(url) = &flags.llm_base_url {
        set(&mut v, &["proposer", "llm", "base_url"], Value::from(url.as_str()));
    }
    if let Some(m) = &flags.llm_model {
        set(&mut v, &["proposer", "llm", "model"], Value::from(m.as_str()));
    }
    if let Some(p) = &flags.script {
        set(&mut v, &["proposer", "replay"], Value::from(absolute(p).display().to_string()));
    }
    if let Some(n) = flags.rounds {
        set(&mut v, &["rounds"], Value::from(n));
    }
    if let Some(n) = flags.warmup {
        set(&mut v, &["warmup_rounds"], Value::from(n));
    }
    if let Some(s) = flags.seed {
        set(&mut v, &["seed"], Value::from(s));
    }
    for a in &flags.ablate {
        set(&mut v, &["ablation", a], Value::Bool(true));
    }
    if flags.no_plots {
        set(&mut v, &["plots"], Value::Bool(false));
    }
    let mut cfg: RunConfig = serde_json::from_value(v).map_err(|e| usage(format!("run configuration: {e}")))?;
    if flags.warmup.is_none() && !file_sets_warmup && cfg.proposer.kind != ProposerKind::Llm {
        cfg.warmup_rounds = 0;
    }
    cfg.validate()?;
    if cfg.proposer.kind == ProposerKind::Llm && cfg.proposer.llm.base_url.is_none() {
        return Err(usage("--proposer llm needs an endpoint: --llm-base-url or CELLFIT_LLM_BASE_URL"));
    }
    if cfg.proposer.kind == ProposerKind::Scripted && cfg.proposer.replay.is_none() {
        return Err(usage("--proposer scripted needs --script"));
    }
    Ok(cfg)
}

fn load_params(path: Option<&Path>) -> Result<PhysicalParameterSet, CliError> {
    match path {
        Some(p) => PhysicalParameterSet::load(p).map_err(usage),
        None => Ok(PhysicalParameterSet::default_set()),
    }
}

fn gen_bench(a: GenBench) -> Result<u8, CliError> {
    let bases = a
        .bases
        .iter()
        .map(|b| if b == "default" { Ok(PhysicalParameterSet::default_set()) } else { load_params(Some(Path::new(b))) })
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = BenchConfig { bases, c_rates: a.c_rates, modes: a.modes, n_per_mode: a.n as usize, seed: a.seed };
    let suite = generate_manifest(&cfg).map_err(usage)?;
    let path = suite.write(&a.out).map_err(failure)?;
    for (mode, s) in &suite.manifest.filter_stats.modes {
        println!(
            "{}: {} candidates, {} unstable, {} insensitive, {} valid, {} selected{}",
            mode.as_str(),
            s.candidates,
            s.stability_rejected,
            s.sensitivity_rejected,
            s.valid,
            s.selected,
            if s.shortfall { " (short of the request)" } else { "" }
        );
    }
    println!("{}", path.display());
    Ok(0)
}

fn simulate(a: Simulate) -> Result<u8, CliError> {
    let params = load_params(a.params.as_deref())?;
    let protocol = match &a.protocol {
        Some(p) => Protocol::load(p).map_err(usage)?,
        None => task_protocol(&params, a.c_rate).map_err(usage)?,
    };
    let degradation = match a.degradation.as_deref() {
        None => None,
        Some("default") => Some(DegradationParameterSet::default_set()),
        Some(p) => Some(DegradationParameterSet::load(Path::new(p)).map_err(usage)?),
    };
    match a.cycles {
        Some(n) => {
            let series = run_cycles(&params, degradation.as_ref(), &protocol, n).map_err(failure)?;
            let mut w = csv::Writer::from_path(&a.out).map_err(failure)?;
            w.write_record(["cycle", "discharge_capacity_ah", "sei_thickness_m", "inventory_loss_mol"]).map_err(failure)?;
            for c in &series.cycles {
                w.write_record([
                    c.cycle.to_string(),
                    c.discharge_capacity_ah.to_string(),
                    c.sei_thickness_m.to_string(),
                    c.inventory_loss_mol.to_string(),
                ])
                .map_err(failure)?;
            }
            w.flush().map_err(failure)?;
            println!("{} cycles ({}) -> {}", series.len(), series.event().as_str(), a.out.display());
        }
        None => {
            let trace = run_protocol(&params, &protocol, degradation.as_ref(), None).map_err(failure)?;
            trace.save_csv(&a.out).map_err(failure)?;
            println!("{} samples ({}) -> {}", trace.len(), trace.event_label(), a.out.display());
        }
    }
    Ok(0)
}

fn termination_code(t: Termination) -> u8 {
    match t {
        Termination::Aborted => EXIT_ABORTED,
        Termination::Converged | Termination::BudgetExhausted => 0,
    }
}

fn calibrate_cmd(a: Calibrate, cancel: &AtomicBool) -> Result<u8, CliError> {
    let cfg = run_config(&a.run)?;
    let source = match (&a.task, &a.manifest, &a.id) {
        (Some(t), _, _) => TaskSource::File { path: absolute(t) },
        (None, Some(m), Some(id)) => TaskSource::Manifest { path: absolute(m), task: id.clone() },
        _ => return Err(usage("give --task, or --manifest with --id")),
    };
    let task: CalibrationTask = source.load()?;
    let run_dir = a.out.unwrap_or_else(|| Path::new("runs").join(&task.id));
    let result = calibrate(&task, &cfg, &run_dir, Some(source), Some(cancel))?;
    println!(
        "{}: {:?} after {} rounds, best total {:.4}% (start {:.4}%) -> {}",
        result.task_id,
        result.termination,
        result.rounds_completed,
        result.best_total_mape(),
        result.initial_total_mape,
        run_dir.display()
    );
    Ok(termination_code(result.termination))
}

fn run_suite_cmd(a: RunSuite, cancel: &AtomicBool) -> Result<u8, CliError> {
    let cfg = run_config(&a.run)?;
    let only = (!a.only.is_empty()).then_some(a.only.as_slice());
    let outcomes = run_suite(&absolute(&a.manifest), only, &cfg, &a.out, a.parallel as usize, Some(cancel))?;
    let mut failed = 0;
    let mut aborted = false;
    for o in &outcomes {
        match o {
            TaskOutcome::Finished { result, resumed } => {
                aborted |= result.termination == Termination::Aborted;
                println!(
                    "{}\t{:?}\t{}\t{:.4}%{}",
                    result.task_id,
                    result.termination,
                    result.rounds_completed,
                    result.best_total_mape(),
                    if *resumed { "\t(resumed)" } else { "" }
                );
            }
            TaskOutcome::Failed { task_id, error } => {
                failed += 1;
                println!("{task_id}\tfailed\t{error}");
            }
        }
    }
    println!("{} tasks, {} failed -> {}", outcomes.len(), failed, a.out.display());
    if aborted || cancel.load(Ordering::SeqCst) {
        return Ok(EXIT_ABORTED);
    }
    Ok(if failed > 0 { EXIT_FAILURE } else { 0 })
}

fn gather(root: &Path) -> Result<Vec<LabelledResult>, CliError> {
    let mut out = collect_results(root, None).map_err(failure)?;
    if !out.is_empty() {
        return Ok(out);
    }
    let mut methods: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| failure(format!("{}: {e}", root.display())))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    methods.sort();
    for dir in methods {
        let label = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        out.extend(collect_results(&dir, Some(&label)).map_err(failure)?);
    }
    Ok(out)
}

fn evaluate(a: Evaluate) -> Result<u8, CliError> {
    let manifest = cellfit::bench::BenchmarkManifest::load(&a.manifest).map_err(usage)?;
    let results = gather(&a.results)?;
    let report: SuiteReport = if results.is_empty() {
        log::warn!("no results under {}; writing an empty report", a.results.display());
        SuiteReport::default()
    } else {
        aggregate_report(&results, &manifest)
    };
    let out = a.out.unwrap_or_else(|| a.results.clone());
    std::fs::create_dir_all(&out).map_err(|e| failure(format!("{}: {e}", out.display())))?;
    let csv_path = out.join("report.csv");
    let text_path = out.join("report.txt");
    std::fs::write(&csv_path, report.to_csv().map_err(failure)?).map_err(|e| failure(format!("{}: {e}", csv_path.display())))?;
    let text = report.to_text();
    std::fs::write(&text_path, &text).map_err(|e| failure(format!("{}: {e}", text_path.display())))?;
    print!("{text}");
    Ok(0)
}

fn replay_cmd(a: Replay) -> Result<u8, CliError> {
    let report = replay_dir(&a.run_dir)?;
    for m in &report.mismatches {
        println!("{m}");
    }
    match &report.best {
        Some(b) => println!("recomputed best: round {} total {:.6}%", b.round, b.total_mape),
        None => println!("recomputed best: none"),
    }
    if !report.best_matches {
        println!("best.json disagrees with the recomputed best");
    }
    println!("{} rounds checked, {}", report.rounds_checked, if report.identical() { "identical" } else { "DIVERGED" });
    Ok(if report.identical() { 0 } else { EXIT_FAILURE })
}

fn plot(a: Plot) -> Result<u8, CliError> {
    let manifest_path = a.run_dir.join(files::RUN);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| failure(format!("{}: {e}", manifest_path.display())))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| failure(format!("{}: {e}", manifest_path.display())))?;
    let source = manifest.source.ok_or_else(|| failure("run.json records no task source"))?;
    let task = source.load()?;
    let phase = if a.warmup { Phase::Warmup } else { Phase::Optimize };
    let round = match a.round {
        Some(r) => r,
        None => {
            let best_path = a.run_dir.join(files::BEST);
            let text = std::fs::read_to_string(&best_path)
                .map_err(|_| usage("no best round recorded; pass --round"))?;
            let best: BestSoFar = serde_json::from_str(&text).map_err(|e| failure(format!("{}: {e}", best_path.display())))?;
            best.round
        }
    };
    let rounds = read_rounds(&a.run_dir.join(files::ROUNDS))?;
    let log = rounds
        .iter()
        .find(|r| r.phase == phase && r.round == round)
        .ok_or_else(|| usage(format!("round {round} is not in the log")))?;
    let out = a.out.unwrap_or_else(|| {
        let tag = if a.warmup { "warmup" } else { "round" };
        a.run_dir.join(files::PLOTS).join(format!("replot_{tag}_{round}.svg"))
    });
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| failure(format!("{}: {e}", parent.display())))?;
    }
    let mut params = task.params.clone();
    params.assign(&log.params).map_err(failure)?;
    let scored = task.evaluate(&params, &manifest.config.loss, round, Some(&out))?;
    let fb = scored.feedback;
    match &fb.visual {
        Some(v) => println!("{v}"),
        None => println!("no picture for this task kind"),
    }
    if !fb.succeeded() {
        println!("round {round} failed: {}", fb.events.join(", "));
    }
    Ok(0)
}

static CANCEL: AtomicBool = AtomicBool::new(false);

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = ctrlc::set_handler(|| {
        log::warn!("interrupt: finishing the current round");
        CANCEL.store(true, Ordering::SeqCst);
    }) {
        log::warn!("no Ctrl-C handler: {e}");
    }
    let outcome = match cli.command {
        Command::GenBench(a) => gen_bench(a),
        Command::Simulate(a) => simulate(a),
        Command::Calibrate(a) => calibrate_cmd(a, &CANCEL),
        Command::RunSuite(a) => run_suite_cmd(a, &CANCEL),
        Command::Evaluate(a) => evaluate(a),
        Command::Replay(a) => replay_cmd(a),
        Command::Plot(a) => plot(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
