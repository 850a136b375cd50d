use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cellfit::bench::task_protocol;
use cellfit::params::{names, PhysicalParameterSet};
use cellfit::sim::run_protocol;

const KEY: &str = names::NEG_PARTICLE_RADIUS;

fn cellfit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cellfit"))
        .args(args)
        .current_dir(dir)
        .env_remove("CELLFIT_LLM_BASE_URL")
        .env_remove("CELLFIT_LLM_MODEL")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Task file whose target is the default cell with the radius scaled.
fn task_file(dir: &Path) -> PathBuf {
    let base = PhysicalParameterSet::default_set();
    let protocol = task_protocol(&base, 1.0).unwrap();
    let mut truth = base.clone();
    truth.set(KEY, 1.3 * base.get(KEY).unwrap()).unwrap();
    run_protocol(&truth, &protocol, None, None).unwrap().save_csv(&dir.join("target.csv")).unwrap();
    protocol.save(&dir.join("protocol.json")).unwrap();
    let file = serde_json::json!({
        "id": "radius",
        "search_keys": [KEY],
        "targets": [{"protocol": "protocol.json", "trace": "target.csv"}],
    });
    let path = dir.join("task.json");
    std::fs::write(&path, file.to_string()).unwrap();
    path
}

fn script(dir: &Path, lines: &[&str]) -> PathBuf {
    let path = dir.join("script.jsonl");
    let body: Vec<String> = lines.iter().map(|f| format!(r#"{{"updated_params": {{"{KEY}": "{f}"}}}}"#)).collect();
    std::fs::write(&path, body.join("\n")).unwrap();
    path
}

#[test]
fn help_lists_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let o = cellfit(dir.path(), &["--help"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for sub in ["gen-bench", "simulate", "calibrate", "run-suite", "evaluate", "replay", "plot"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    assert!(text.contains("CELLFIT_LLM_BASE_URL"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cellfit(dir.path(), &["replay", "--run-dir", "x", "--bogus"])), 2);
}

#[test]
fn gen_bench_is_reproducible_and_rejects_zero() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| vec!["gen-bench", "--n", "1", "--c-rates", "1", "--modes", "extreme", "--seed", "5", "--out", out];
    assert_eq!(code(&cellfit(dir.path(), &args("a"))), 0);
    assert_eq!(code(&cellfit(dir.path(), &args("b"))), 0);
    let a = std::fs::read_to_string(dir.path().join("a/manifest.json")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("b/manifest.json")).unwrap();
    assert_eq!(a, b);
    let m: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert!(m["filter_stats"]["modes"]["extreme"]["candidates"].as_u64().unwrap() > 0);
    assert_eq!(code(&cellfit(dir.path(), &["gen-bench", "--n", "0", "--out", "c"])), 2);
    assert!(!dir.path().join("c").exists());
}

#[test]
fn scripted_calibration_replays_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    task_file(dir.path());
    script(dir.path(), &["*1.2", "*1.1"]);
    let o = cellfit(
        dir.path(),
        &["calibrate", "--task", "task.json", "--proposer", "scripted", "--script", "script.jsonl", "--rounds", "3", "--out", "run", "--ablate", "no_memory"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = dir.path().join("run");
    assert!(run.join("best.json").exists());
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["ablation"]["no_memory"], true);
    assert_eq!(manifest["config"]["warmup_rounds"], 0);

    let o = cellfit(dir.path(), &["replay", "--run-dir", "run"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("3 rounds checked, identical"));

    let o = cellfit(dir.path(), &["plot", "--run-dir", "run"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let svg = std::fs::read_to_string(run.join("plots/replot_round_3.svg")).unwrap();
    assert!(svg.contains("sim-voltage"));

    let best = run.join("best.json");
    let text = std::fs::read_to_string(&best).unwrap().replace("\"round\": 3", "\"round\": 2");
    std::fs::write(&best, text).unwrap();
    let o = cellfit(dir.path(), &["replay", "--run-dir", "run"]);
    assert_ne!(code(&o), 0);
    assert!(stdout(&o).contains("DIVERGED"));
}

#[test]
fn plot_of_a_failed_round_shows_the_target_alone() {
    let dir = tempfile::tempdir().unwrap();
    task_file(dir.path());
    let o = cellfit(dir.path(), &["calibrate", "--task", "task.json", "--proposer", "random", "--rounds", "2", "--no-plots", "--out", "run"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rounds = dir.path().join("run/rounds.jsonl");
    let text = std::fs::read_to_string(&rounds).unwrap();
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    lines[1]["params"][KEY] = serde_json::json!(-1.0);
    let body: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
    std::fs::write(&rounds, body.join("\n")).unwrap();

    let o = cellfit(dir.path(), &["plot", "--run-dir", "run", "--round", "2", "--out", "failed.svg"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("round 2 failed"));
    let svg = std::fs::read_to_string(dir.path().join("failed.svg")).unwrap();
    assert!(svg.contains("simulation failed"));
    assert!(svg.contains("target-voltage") && !svg.contains("sim-voltage"));
}

#[test]
fn llm_without_endpoint_fails_before_simulating() {
    let dir = tempfile::tempdir().unwrap();
    task_file(dir.path());
    let o = cellfit(dir.path(), &["calibrate", "--task", "task.json", "--proposer", "llm", "--out", "run"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("endpoint"));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn evaluate_on_empty_results_warns_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cellfit(dir.path(), &["gen-bench", "--n", "1", "--c-rates", "1", "--modes", "extreme", "--out", "bench"])), 0);
    std::fs::create_dir(dir.path().join("empty")).unwrap();
    let o = cellfit(dir.path(), &["evaluate", "--results", "empty", "--manifest", "bench/manifest.json"]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("no results"));
    let csv = std::fs::read_to_string(dir.path().join("empty/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn suite_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cellfit(dir.path(), &["gen-bench", "--n", "1", "--c-rates", "1", "--out", "bench"])), 0);
    let o = cellfit(
        dir.path(),
        &["run-suite", "--manifest", "bench/manifest.json", "--proposer", "sobol", "--rounds", "2", "--no-plots", "--out", "res"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("2 tasks, 0 failed"));
    let o = cellfit(dir.path(), &["evaluate", "--results", "res", "--manifest", "bench/manifest.json", "--out", "report"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("report/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(csv.contains("sobol"));
}

#[test]
fn simulate_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = cellfit(dir.path(), &["simulate", "--c-rate", "1", "--out", "t.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(text.lines().count() > 100);
}
