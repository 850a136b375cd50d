//! Parameter recovery, trajectory/parameter correlation, held-out protocol
//! checks and suite tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{BenchmarkManifest, Mode};
use crate::feedback::align::align_traces;
use crate::metrics;
pub use crate::metrics::{mape, rmse};
use crate::orchestrator::{files, Phase, RoundLog, RunResult};
use crate::params::PhysicalParameterSet;
use crate::sim::{run_protocol, Protocol};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("`{key}` missing from {which}")]
    MissingKey { key: String, which: &'static str },
    #[error("`{key}` must be positive, got {value}")]
    NonPositive { key: String, value: f64 },
    #[error("need at least 3 successful rounds, got {0}")]
    TooFewRounds(usize),
    #[error("{path}: {reason}")]
    Read { path: String, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String, EvalError> {
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterError {
    /// `sqrt(mean(ln(θ̂/θ*)²))` over the search keys.
    pub distance: f64,
    pub log_ratios: BTreeMap<String, f64>,
}

pub fn parameter_error(
    estimate: &BTreeMap<String, f64>,
    truth: &BTreeMap<String, f64>,
    keys: &[String],
) -> Result<ParameterError, EvalError> {
    let mut log_ratios = BTreeMap::new();
    for k in keys {
        let get = |m: &BTreeMap<String, f64>, which| {
            let v = *m.get(k).ok_or_else(|| EvalError::MissingKey { key: k.clone(), which })?;
            if v > 0.0 {
                Ok(v)
            } else {
                Err(EvalError::NonPositive { key: k.clone(), value: v })
            }
        };
        let (a, b) = (get(estimate, "estimate")?, get(truth, "truth")?);
        log_ratios.insert(k.clone(), (a / b).ln());
    }
    let n = log_ratios.len().max(1) as f64;
    let distance = (log_ratios.values().map(|r| r * r).sum::<f64>() / n).sqrt();
    Ok(ParameterError { distance, log_ratios })
}

/// Pearson correlation; `None` when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties sharing their mean rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&ranks(x), &ranks(y))
}

fn best_so_far(x: &[f64]) -> Vec<f64> {
    let mut b = f64::INFINITY;
    x.iter()
        .map(|v| {
            b = b.min(*v);
            b
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    /// `None` when a series is constant.
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    /// Whenever one best-so-far sequence improves, so does the other.
    pub monotone: bool,
    pub n: usize,
}

/// Correlation between per-round trajectory MAPE and parameter error.
pub fn within_case_correlation(rounds: &[(f64, f64)]) -> Result<Correlation, EvalError> {
    if rounds.len() < 3 {
        return Err(EvalError::TooFewRounds(rounds.len()));
    }
    let (m, p): (Vec<f64>, Vec<f64>) = rounds.iter().copied().unzip();
    let (bm, bp) = (best_so_far(&m), best_so_far(&p));
    let monotone = (1..rounds.len()).all(|i| (bm[i] < bm[i - 1]) == (bp[i] < bp[i - 1]));
    Ok(Correlation { pearson: pearson(&m, &p), spearman: spearman(&m, &p), monotone, n: rounds.len() })
}

/// One point of a run's trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub round: usize,
    pub total_mape: f64,
    pub param_error: f64,
}

/// Successful optimization rounds of a run directory, scored against `truth`.
pub fn trajectory(run_dir: &Path, truth: &BTreeMap<String, f64>) -> Result<Vec<TrajectoryPoint>, EvalError> {
    let path = run_dir.join(files::ROUNDS);
    let read_err = |reason: String| EvalError::Read { path: path.display().to_string(), reason };
    let file = std::fs::File::open(&path).map_err(|e| read_err(e.to_string()))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| read_err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: RoundLog = serde_json::from_str(&line).map_err(|e| read_err(e.to_string()))?;
        if r.phase != Phase::Optimize || !r.events.iter().any(|e| e == crate::feedback::SUCCESS_EVENT) {
            continue;
        }
        let keys: Vec<String> = r.params.keys().cloned().collect();
        let pe = parameter_error(&r.params, truth, &keys)?;
        out.push(TrajectoryPoint { round: r.round, total_mape: r.residuals.total_mape, param_error: pe.distance });
    }
    Ok(out)
}

pub fn trajectory_csv(points: &[TrajectoryPoint]) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["round", "total_mape", "param_error"])?;
    for p in points {
        w.write_record([p.round.to_string(), p.total_mape.to_string(), p.param_error.to_string()])?;
    }
    csv_string(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseCorrelation {
    pub task_id: String,
    #[serde(flatten)]
    pub correlation: Correlation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub cases: Vec<CaseCorrelation>,
    /// Means over the cases where the coefficient is defined.
    pub mean_pearson: Option<f64>,
    pub mean_spearman: Option<f64>,
    pub monotone_fraction: f64,
}

impl CorrelationReport {
    pub fn new(cases: Vec<CaseCorrelation>) -> Self {
        let mean = |f: fn(&Correlation) -> Option<f64>| {
            let v: Vec<f64> = cases.iter().filter_map(|c| f(&c.correlation)).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let monotone = cases.iter().filter(|c| c.correlation.monotone).count();
        Self {
            mean_pearson: mean(|c| c.pearson),
            mean_spearman: mean(|c| c.spearman),
            monotone_fraction: if cases.is_empty() { 0.0 } else { monotone as f64 / cases.len() as f64 },
            cases,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutEntry {
    pub protocol: String,
    pub c_rate: f64,
    /// Voltage MAPE [%] between the two simulations; `None` if either failed.
    pub voltage_mape: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// The held-out protocol family at each rate, with `params`' cutoffs.
pub fn held_out_protocols(params: &PhysicalParameterSet, c_rates: &[f64]) -> Result<Vec<(f64, Protocol)>, crate::params::ParamError> {
    let d = params.resolve()?;
    Ok(c_rates.iter().map(|&c| (c, Protocol::held_out(c, d.lower_cutoff, d.upper_cutoff))).collect())
}

/// Simulates `estimate` and `truth` on each protocol and compares their
/// voltage traces after per-step alignment.
pub fn held_out_validation(
    estimate: &PhysicalParameterSet,
    protocols: &[(f64, Protocol)],
    truth: &PhysicalParameterSet,
) -> Vec<HeldOutEntry> {
    protocols
        .iter()
        .map(|(c, p)| {
            let entry = |voltage_mape, failure| HeldOutEntry { protocol: p.name.clone(), c_rate: *c, voltage_mape, failure };
            let sim = |params: &PhysicalParameterSet, which: &str| match run_protocol(params, p, None, None) {
                Ok(t) if t.succeeded() => Ok(t),
                Ok(t) => Err(format!("{which}: {}", t.event_label())),
                Err(e) => Err(format!("{which}: {e}")),
            };
            let (a, b) = match (sim(estimate, "estimate"), sim(truth, "truth")) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => return entry(None, Some(e)),
            };
            let Some(pair) = align_traces(&a, &b, &p.kinds()) else {
                return entry(None, Some("traces could not be aligned".into()));
            };
            match metrics::mape(&pair.sim_all().voltage, &pair.target_all().voltage) {
                Ok(m) => entry(m, None),
                Err(e) => entry(None, Some(e.to_string())),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(v: &[f64]) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt(), n: v.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub mode: Mode,
    pub base: String,
    /// C-rate formatted as in task ids.
    pub c_rate: String,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    #[serde(flatten)]
    pub key: GroupKey,
    pub tasks: usize,
    /// Runs that never simulated successfully.
    pub failures: usize,
    pub total_mape: Option<MeanStd>,
    pub voltage_rmse_v: Option<MeanStd>,
    pub initial_total_mape: Option<MeanStd>,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub rows: Vec<SuiteRow>,
    /// (method, task id) pairs with no result.
    pub missing: Vec<(String, String)>,
    /// Results whose task is not in the manifest.
    pub unknown: Vec<(String, String)>,
}

/// Result of one run, labelled with the method that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledResult {
    pub method: String,
    pub result: RunResult,
}

/// Groups results by (mode, base, C-rate, method). Every method seen is
/// expected on every manifest task; gaps are listed in `missing`.
pub fn aggregate_report(results: &[LabelledResult], manifest: &BenchmarkManifest) -> SuiteReport {
    let methods: BTreeSet<&str> = results.iter().map(|r| r.method.as_str()).collect();
    let mut groups: BTreeMap<GroupKey, Vec<&RunResult>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    let mut unknown = Vec::new();
    for r in results {
        let Some(task) = manifest.task(&r.result.task_id) else {
            unknown.push((r.method.clone(), r.result.task_id.clone()));
            continue;
        };
        seen.insert((r.method.as_str(), task.id.as_str()));
        let key = GroupKey {
            mode: task.mode,
            base: task.base.clone(),
            c_rate: format!("{}C", task.c_rate),
            method: r.method.clone(),
        };
        groups.entry(key).or_default().push(&r.result);
    }
    let mut missing = Vec::new();
    for m in &methods {
        for t in &manifest.tasks {
            if !seen.contains(&(*m, t.id.as_str())) {
                missing.push((m.to_string(), t.id.clone()));
            }
        }
    }
    let rows = groups
        .into_iter()
        .map(|(key, rs)| {
            let ok: Vec<&&RunResult> = rs.iter().filter(|r| r.best.is_some()).collect();
            SuiteRow {
                key,
                tasks: rs.len(),
                failures: rs.len() - ok.len(),
                total_mape: MeanStd::of(&ok.iter().map(|r| r.best_total_mape()).collect::<Vec<_>>()),
                voltage_rmse_v: MeanStd::of(
                    &ok.iter()
                        .filter_map(|r| r.best_residuals.as_ref().and_then(|x| x.voltage_rmse))
                        .collect::<Vec<_>>(),
                ),
                initial_total_mape: MeanStd::of(&rs.iter().map(|r| r.initial_total_mape).collect::<Vec<_>>()),
                runtime_s: rs.iter().map(|r| r.timings.total_s).sum(),
            }
        })
        .collect();
    SuiteReport { rows, missing, unknown }
}

fn ms(m: &Option<MeanStd>, digits: usize) -> (String, String) {
    match m {
        Some(m) => (format!("{:.*}", digits, m.mean), format!("{:.*}", digits, m.std)),
        None => (String::new(), String::new()),
    }
}

const COLUMNS: [&str; 12] = [
    "mode",
    "base",
    "c_rate",
    "method",
    "tasks",
    "failures",
    "total_mape_mean_pct",
    "total_mape_std_pct",
    "voltage_rmse_mean_v",
    "voltage_rmse_std_v",
    "initial_total_mape_mean_pct",
    "runtime_s",
];

impl SuiteReport {
    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                let (tm, ts) = ms(&r.total_mape, 3);
                let (vm, vs) = ms(&r.voltage_rmse_v, 5);
                let (im, _) = ms(&r.initial_total_mape, 3);
                vec![
                    r.key.mode.as_str().to_string(),
                    r.key.base.clone(),
                    r.key.c_rate.clone(),
                    r.key.method.clone(),
                    r.tasks.to_string(),
                    r.failures.to_string(),
                    tm,
                    ts,
                    vm,
                    vs,
                    im,
                    format!("{:.1}", r.runtime_s),
                ]
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(COLUMNS)?;
        for row in self.cells() {
            w.write_record(&row)?;
        }
        csv_string(w)
    }

    /// Space-aligned table followed by any missing or unknown results.
    pub fn to_text(&self) -> String {
        let cells = self.cells();
        let mut widths: Vec<usize> = COLUMNS.iter().map(|c| c.len()).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |cols: Vec<&str>, out: &mut String| {
            let parts: Vec<String> = cols.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(COLUMNS.to_vec(), &mut out);
        for row in &cells {
            line(row.iter().map(String::as_str).collect(), &mut out);
        }
        for (m, t) in &self.missing {
            let _ = writeln!(out, "missing: {m} {t}");
        }
        for (m, t) in &self.unknown {
            let _ = writeln!(out, "not in manifest: {m} {t}");
        }
        out
    }
}

/// Finished results under `root/<task id>/result.json`, in task-id order.
pub fn collect_results(root: &Path, method: Option<&str>) -> Result<Vec<LabelledResult>, EvalError> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(root).map_err(|e| EvalError::Read { path: root.display().to_string(), reason: e.to_string() })?;
    let mut dirs: Vec<_> = entries.filter_map(Result::ok).map(|e| e.path()).filter(|p| p.join(files::RESULT).is_file()).collect();
    dirs.sort();
    for d in dirs {
        let path = d.join(files::RESULT);
        let result = RunResult::load(&path).map_err(|e| EvalError::Read { path: path.display().to_string(), reason: e.to_string() })?;
        let method = method.map_or_else(|| result.proposer.as_str().to_string(), str::to_string);
        out.push(LabelledResult { method, result });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(k: &[&str]) -> Vec<String> {
        k.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parameter_error_examples() {
        let a = BTreeMap::from([("x".to_string(), 2.0), ("y".to_string(), 5.0)]);
        let b = BTreeMap::from([("x".to_string(), 1.0), ("y".to_string(), 5.0)]);
        assert_eq!(parameter_error(&a, &a, &keys(&["x", "y"])).unwrap().distance, 0.0);
        let one = parameter_error(&a, &b, &keys(&["x"])).unwrap().distance;
        assert!((one - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(one, parameter_error(&b, &a, &keys(&["x"])).unwrap().distance);
        let two = parameter_error(&a, &b, &keys(&["x", "y"])).unwrap().distance;
        assert!((two - std::f64::consts::LN_2 / 2f64.sqrt()).abs() < 1e-15);
        let zero = BTreeMap::from([("x".to_string(), 0.0)]);
        assert!(matches!(parameter_error(&zero, &b, &keys(&["x"])), Err(EvalError::NonPositive { .. })));
        assert!(matches!(parameter_error(&a, &b, &keys(&["z"])), Err(EvalError::MissingKey { .. })));
    }

    #[test]
    fn parameter_error_ignores_units() {
        let a = BTreeMap::from([("r".to_string(), 7.5e-6)]);
        let b = BTreeMap::from([("r".to_string(), 5.0e-6)]);
        let a_um = BTreeMap::from([("r".to_string(), 7.5)]);
        let b_um = BTreeMap::from([("r".to_string(), 5.0)]);
        let k = keys(&["r"]);
        let d1 = parameter_error(&a, &b, &k).unwrap().distance;
        let d2 = parameter_error(&a_um, &b_um, &k).unwrap().distance;
        assert!((d1 - d2).abs() < 1e-15);
    }

    #[test]
    fn correlation_signs_and_undefined() {
        let up: Vec<(f64, f64)> = (0..6).map(|i| (10.0 - i as f64, (5.0 - i as f64).exp())).collect();
        let c = within_case_correlation(&up).unwrap();
        assert_eq!(c.spearman, Some(1.0));
        assert!(c.monotone);
        let anti: Vec<(f64, f64)> = (0..6).map(|i| (10.0 - i as f64, i as f64)).collect();
        let c = within_case_correlation(&anti).unwrap();
        assert_eq!(c.spearman, Some(-1.0));
        assert!(!c.monotone);
        let flat = vec![(1.0, 3.0), (1.0, 2.0), (1.0, 1.0)];
        let c = within_case_correlation(&flat).unwrap();
        assert_eq!(c.pearson, None);
        assert_eq!(c.spearman, None);
        assert!(matches!(within_case_correlation(&flat[..2]), Err(EvalError::TooFewRounds(2))));
    }

    #[test]
    fn pearson_reference() {
        // numpy.corrcoef([1, 2, 3, 5], [2, 1, 4, 4])[0, 1]
        let r = pearson(&[1.0, 2.0, 3.0, 5.0], &[2.0, 1.0, 4.0, 4.0]).unwrap();
        assert!((r - 0.7481900559272088).abs() < 1e-12, "{r}");
    }

    #[test]
    fn ties_share_ranks() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn mean_std_of_one_value() {
        let m = MeanStd::of(&[4.2]).unwrap();
        assert_eq!((m.mean, m.std), (4.2, 0.0));
        assert!(MeanStd::of(&[]).is_none());
    }

    #[test]
    fn trajectory_csv_header() {
        let p = vec![TrajectoryPoint { round: 1, total_mape: 2.5, param_error: 0.125 }];
        assert_eq!(trajectory_csv(&p).unwrap(), "round,total_mape,param_error\n1,2.5,0.125\n");
    }
}
