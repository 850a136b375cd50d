//! Reading cycler exports (CSV, optionally gzipped) into traces and cycle
//! series. Columns are mapped explicitly; nothing is guessed.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::trace::integrate_capacity;
use crate::sim::{CycleRecord, CycleSeries, SimulationTrace};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: column `{column}` not found (header: {header:?})")]
    Schema { path: String, column: String, header: Vec<String> },
    #[error("{path} line {line}: {reason}")]
    Row { path: String, line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("no complete cycle found")]
    EmptySeries,
    #[error("cycle range {0}..={1} selects nothing")]
    BadRange(usize, usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    #[default]
    S,
    Min,
    H,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurrentUnit {
    #[default]
    #[serde(rename = "A")]
    A,
    #[serde(rename = "mA")]
    MilliA,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum VoltageUnit {
    #[default]
    #[serde(rename = "V")]
    V,
    #[serde(rename = "mV")]
    MilliV,
}

/// Which file columns hold which channel, and in what units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub time: String,
    #[serde(default)]
    pub time_unit: TimeUnit,
    pub current: String,
    #[serde(default)]
    pub current_unit: CurrentUnit,
    pub voltage: String,
    #[serde(default)]
    pub voltage_unit: VoltageUnit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<String>,
    /// Set when the file already reports discharge as positive current.
    /// Most cyclers report it negative, which is the default.
    #[serde(default)]
    pub discharge_positive: bool,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            time: "time_s".into(),
            time_unit: TimeUnit::S,
            current: "current_a".into(),
            current_unit: CurrentUnit::A,
            voltage: "voltage_v".into(),
            voltage_unit: VoltageUnit::V,
            cycle: None,
            step: None,
            discharge_positive: false,
            delimiter: ',',
        }
    }
}

/// One sample in SI units with discharge as positive current, the
/// simulator's convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CyclingRecord {
    pub time: f64,
    pub current: f64,
    pub voltage: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<String>,
}

fn open(path: &Path) -> Result<Box<dyn Read>, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    let gz = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    Ok(if gz {
        Box::new(flate2::read::MultiGzDecoder::new(std::io::BufReader::new(file)))
    } else {
        Box::new(std::io::BufReader::new(file))
    })
}

pub fn load_cycling_csv(path: &Path, map: &ColumnMap) -> Result<Vec<CyclingRecord>, DataError> {
    read_cycling_csv(open(path)?, &path.display().to_string(), map)
}

/// As [`load_cycling_csv`] over any reader; `name` is used in errors.
pub fn read_cycling_csv<R: Read>(reader: R, name: &str, map: &ColumnMap) -> Result<Vec<CyclingRecord>, DataError> {
    let csv_err = |source| DataError::Csv { path: name.to_string(), source };
    let mut r = csv::ReaderBuilder::new().delimiter(map.delimiter as u8).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let find = |col: &str| {
        header.iter().position(|h| h == col).ok_or_else(|| DataError::Schema {
            path: name.to_string(),
            column: col.to_string(),
            header: header.clone(),
        })
    };
    let (ti, ci, vi) = (find(&map.time)?, find(&map.current)?, find(&map.voltage)?);
    let cyc = map.cycle.as_deref().map(find).transpose()?;
    let stp = map.step.as_deref().map(find).transpose()?;
    let time_scale = match map.time_unit {
        TimeUnit::S => 1.0,
        TimeUnit::Min => 60.0,
        TimeUnit::H => 3600.0,
    };
    let current_scale = match map.current_unit {
        CurrentUnit::A => 1.0,
        CurrentUnit::MilliA => 1e-3,
    } * if map.discharge_positive { 1.0 } else { -1.0 };
    let voltage_scale = match map.voltage_unit {
        VoltageUnit::V => 1.0,
        VoltageUnit::MilliV => 1e-3,
    };
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        // line 1 is the header
        let line = i + 2;
        let num = |k: usize, col: &str| -> Result<f64, DataError> {
            let raw = rec.get(k).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::Row { path: name.to_string(), line, reason: format!("`{col}` = {raw:?} is not a number") })
        };
        let cycle = match cyc {
            Some(k) => {
                let raw = rec.get(k).unwrap_or("");
                let v = raw.parse::<f64>().ok().filter(|v| v.fract() == 0.0 && *v >= 0.0).ok_or_else(|| DataError::Row {
                    path: name.to_string(),
                    line,
                    reason: format!("cycle index {raw:?} is not a whole number"),
                })?;
                Some(v as usize)
            }
            None => None,
        };
        out.push(CyclingRecord {
            time: num(ti, &map.time)? * time_scale,
            current: num(ci, &map.current)? * current_scale + 0.0,
            voltage: num(vi, &map.voltage)? * voltage_scale,
            cycle,
            step: stp.map(|k| rec.get(k).unwrap_or("").to_string()),
        });
    }
    Ok(out)
}

/// Median of each 5-sample window (shrunk at the ends).
pub fn median_filter5(x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(2);
            let hi = (i + 3).min(x.len());
            let mut w: Vec<f64> = x[lo..hi].to_vec();
            w.sort_by(f64::total_cmp);
            let m = w.len();
            if m % 2 == 1 {
                w[m / 2]
            } else {
                0.5 * (w[m / 2 - 1] + w[m / 2])
            }
        })
        .collect()
}

/// Discharged charge [Ah] of the interval between samples `i` and `i + 1`;
/// zero across a clock reset.
fn interval_discharge(r: &[CyclingRecord], i: usize) -> f64 {
    let dt = r[i + 1].time - r[i].time;
    if dt <= 0.0 {
        return 0.0;
    }
    0.5 * (r[i].current.max(0.0) + r[i + 1].current.max(0.0)) * dt / 3600.0
}

/// Total discharged charge over all records [Ah].
pub fn total_discharge_ah(records: &[CyclingRecord]) -> f64 {
    (0..records.len().saturating_sub(1)).map(|i| interval_discharge(records, i)).sum()
}

fn sign_class(i: f64) -> i8 {
    if i > 0.0 {
        1
    } else if i < 0.0 {
        -1
    } else {
        0
    }
}

/// Start index of every cycle.
fn cycle_starts(records: &[CyclingRecord]) -> Vec<usize> {
    if records.iter().all(|r| r.cycle.is_some()) {
        let mut starts = vec![0];
        for i in 1..records.len() {
            if records[i].cycle != records[i - 1].cycle {
                starts.push(i);
            }
        }
        return starts;
    }
    let smooth = median_filter5(&records.iter().map(|r| r.current).collect::<Vec<_>>());
    let mut starts = vec![0];
    let mut last = 0i8;
    for (i, &c) in smooth.iter().enumerate() {
        let s = sign_class(c);
        if s == 0 {
            continue;
        }
        if last == -1 && s == 1 {
            // back up to the last raw sample that was not yet discharging
            let mut j = i;
            while j > 0 && records[j].current > 0.0 {
                j -= 1;
            }
            if j > *starts.last().expect("nonempty") {
                starts.push(j);
            }
        }
        last = s;
    }
    starts
}

/// Trace over `records`: time shifted to start at zero (and made continuous
/// across clock resets), a new step whenever the step label or the current's
/// direction changes.
pub fn records_to_trace(records: &[CyclingRecord]) -> SimulationTrace {
    let smooth = median_filter5(&records.iter().map(|r| r.current).collect::<Vec<_>>());
    let mut t = SimulationTrace::empty();
    let mut offset = records.first().map_or(0.0, |r| -r.time);
    let mut step = 0usize;
    for (i, r) in records.iter().enumerate() {
        if i > 0 {
            let prev = &records[i - 1];
            if r.time < prev.time {
                offset += prev.time - r.time;
            }
            let changed = match (&r.step, &prev.step) {
                (Some(a), Some(b)) => a != b,
                _ => sign_class(smooth[i]) != sign_class(smooth[i - 1]),
            };
            if changed {
                step += 1;
            }
        }
        t.time.push(r.time + offset);
        t.voltage.push(r.voltage);
        t.current.push(r.current);
        t.step_index.push(step);
    }
    t.capacity = integrate_capacity(&t.time, &t.current);
    t.rebuild_summaries();
    t
}

/// Splits records into cycles: by the cycle column when every record has
/// one, otherwise at each switch from charge to discharge of the
/// median-filtered current. A cycle must contain discharge; leading samples
/// without any are folded into the first cycle. Each interval between
/// samples is credited to the cycle of its first sample, so the cycle
/// capacities sum to [`total_discharge_ah`].
pub fn segment_cycles(records: &[CyclingRecord]) -> Result<CycleSeries, DataError> {
    if records.is_empty() {
        return Err(DataError::EmptySeries);
    }
    let mut starts = cycle_starts(records);
    starts.push(records.len());
    let mut bounds: Vec<(usize, usize)> = starts.windows(2).map(|w| (w[0], w[1])).filter(|(a, b)| b > a).collect();
    let discharges = |(a, b): (usize, usize)| records[a..b].iter().any(|r| r.current > 0.0);
    while bounds.len() > 1 && !discharges(bounds[0]) {
        let (a, _) = bounds.remove(0);
        bounds[0].0 = a;
    }
    if bounds.is_empty() || !discharges(bounds[0]) {
        return Err(DataError::EmptySeries);
    }
    let n = records.len();
    let cycles = bounds
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| {
            let capacity: f64 = (a..b.min(n - 1)).map(|i| interval_discharge(records, i)).sum();
            CycleRecord {
                cycle: records[a].cycle.unwrap_or(k + 1),
                trace: records_to_trace(&records[a..b]),
                discharge_capacity_ah: capacity,
                sei_thickness_m: 0.0,
                inventory_loss_mol: 0.0,
            }
        })
        .collect();
    Ok(CycleSeries { cycles })
}

/// One target trace from a cycler export: the whole file, or the cycles
/// whose 1-based position lies in `cycles`.
pub fn load_trace(path: &Path, map: &ColumnMap, cycles: Option<(usize, usize)>) -> Result<SimulationTrace, DataError> {
    let records = load_cycling_csv(path, map)?;
    let Some((first, last)) = cycles else { return Ok(records_to_trace(&records)) };
    let mut starts = cycle_starts(&records);
    starts.push(records.len());
    let a = first.checked_sub(1).and_then(|i| starts.get(i)).copied();
    let b = starts.get(last).copied();
    match (a, b) {
        (Some(a), Some(b)) if first <= last && b > a => Ok(records_to_trace(&records[a..b])),
        _ => Err(DataError::BadRange(first, last)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(time: f64, current: f64) -> CyclingRecord {
        CyclingRecord { time, current, voltage: 3.7, cycle: None, step: None }
    }

    #[test]
    fn milliamps_and_sign_are_converted() {
        let text = "t,i,v\n0,-1500,3.9\n1,2000,4.1\n";
        let map = ColumnMap {
            time: "t".into(),
            current: "i".into(),
            voltage: "v".into(),
            current_unit: CurrentUnit::MilliA,
            ..Default::default()
        };
        let r = read_cycling_csv(text.as_bytes(), "mem", &map).unwrap();
        assert_eq!(r[0].current, 1.5);
        assert_eq!(r[1].current, -2.0);
    }

    #[test]
    fn missing_column_is_named() {
        let err = read_cycling_csv("time_s,current_a\n0,1\n".as_bytes(), "mem", &ColumnMap::default()).unwrap_err();
        assert!(matches!(&err, DataError::Schema { column, .. } if column == "voltage_v"), "{err}");
    }

    #[test]
    fn bad_number_reports_its_line() {
        let err = read_cycling_csv("time_s,current_a,voltage_v\n0,1,3.7\n1,x,3.7\n".as_bytes(), "mem", &ColumnMap::default())
            .unwrap_err();
        assert!(matches!(err, DataError::Row { line: 3, .. }), "{err}");
    }

    #[test]
    fn explicit_cycle_column_groups() {
        let mut r = Vec::new();
        for c in 1..=3 {
            for k in 0..4 {
                r.push(CyclingRecord { cycle: Some(c), ..rec(k as f64 * 10.0, if k < 2 { 1.0 } else { -1.0 }) });
            }
        }
        let s = segment_cycles(&r).unwrap();
        assert_eq!(s.cycles.iter().map(|c| c.cycle).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn square_wave_gives_equal_cycles() {
        // per 20 s period: rest, charge 1 A, rest, discharge 2 A; one
        // sample per second and a closing rest sample
        let mut r = Vec::new();
        for p in 0..2 {
            for k in 0..20 {
                let i = match k {
                    0 | 10 => 0.0,
                    1..=9 => -1.0,
                    _ => 2.0,
                };
                r.push(rec((p * 20 + k) as f64, i));
            }
        }
        r.push(rec(40.0, 0.0));
        let s = segment_cycles(&r).unwrap();
        assert_eq!(s.len(), 2);
        // trapezoid by hand: ramp 0->2 (1 A s), 8 s at 2 A (16 A s), ramp 2->0 (1 A s)
        for c in &s.cycles {
            assert!((c.discharge_capacity_ah * 3600.0 - 18.0).abs() < 1e-12, "{}", c.discharge_capacity_ah * 3600.0);
        }
        let total: f64 = s.capacities().iter().sum();
        assert!((total - total_discharge_ah(&r)).abs() <= 1e-6 * total);
    }

    #[test]
    fn never_discharging_is_an_error() {
        let r: Vec<_> = (0..10).map(|k| rec(k as f64, -1.0)).collect();
        assert!(matches!(segment_cycles(&r), Err(DataError::EmptySeries)));
        assert!(matches!(segment_cycles(&[]), Err(DataError::EmptySeries)));
    }

    #[test]
    fn median_filter_removes_a_spike() {
        let x = [1.0, 1.0, -5.0, 1.0, 1.0];
        assert_eq!(median_filter5(&x), vec![1.0, 1.0, 1.0, 1.0, 1.0]);
    }
}
