//! Per-channel residuals and the weighted objective.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::align::AlignedPair;
use crate::metrics::{self, MetricError};

/// Objective assigned when a simulation produced nothing comparable.
pub const FAILED_TOTAL_MAPE: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("weight {name} must be finite and non-negative, got {value}")]
    BadWeight { name: String, value: f64 },
    #[error("at least one channel weight must be positive")]
    NoPositiveWeight,
    #[error("regularization reference for {0} must be positive")]
    BadReference(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelWeights {
    pub voltage: f64,
    pub current: f64,
    pub capacity: f64,
}

impl Default for ChannelWeights {
    fn default() -> Self {
        Self { voltage: 1.0 / 3.0, current: 1.0 / 3.0, capacity: 1.0 / 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight per protocol name; protocols not listed weigh 1.
    pub protocol_weights: BTreeMap<String, f64>,
    pub channels: ChannelWeights,
    /// Strength of the log-distance penalty towards `reference`.
    pub lambda: f64,
    pub reference: BTreeMap<String, f64>,
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        let check = |name: &str, value: f64| {
            if value.is_finite() && value >= 0.0 {
                Ok(())
            } else {
                Err(LossError::BadWeight { name: name.to_string(), value })
            }
        };
        for (k, &w) in &self.protocol_weights {
            check(k, w)?;
        }
        let c = &self.channels;
        check("voltage", c.voltage)?;
        check("current", c.current)?;
        check("capacity", c.capacity)?;
        check("lambda", self.lambda)?;
        if c.voltage + c.current + c.capacity <= 0.0 {
            return Err(LossError::NoPositiveWeight);
        }
        for (k, &v) in &self.reference {
            if !(v > 0.0) || !v.is_finite() {
                return Err(LossError::BadReference(k.clone()));
            }
        }
        Ok(())
    }

    pub fn protocol_weight(&self, name: &str) -> f64 {
        self.protocol_weights.get(name).copied().unwrap_or(1.0)
    }

    /// `Σ (ln θ_k/θ_ref_k)²` over keys present in both maps.
    pub fn regularization(&self, theta: &BTreeMap<String, f64>) -> f64 {
        self.reference
            .iter()
            .filter_map(|(k, r)| theta.get(k).map(|v| (v / r).ln().powi(2)))
            .sum()
    }

    /// Weighted mean of per-protocol totals plus the regularization term.
    pub fn objective(&self, per_protocol: &[(String, f64)], theta: &BTreeMap<String, f64>) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (name, total) in per_protocol {
            let w = self.protocol_weight(name);
            num += w * total;
            den += w;
        }
        let data = if den > 0.0 { num / den } else { FAILED_TOTAL_MAPE };
        if self.lambda > 0.0 {
            data + self.lambda * self.regularization(theta)
        } else {
            data
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_mape: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voltage_rmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voltage_mape: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_mape: Option<f64>,
    pub total_mape: f64,
}

impl ResidualSet {
    /// Residuals for a run with nothing to compare.
    pub fn failed() -> Self {
        Self { capacity_mape: None, voltage_rmse: None, voltage_mape: None, current_mape: None, total_mape: FAILED_TOTAL_MAPE }
    }
}

/// Residuals over every aligned sample. `total_mape` is the weighted sum of
/// the channel MAPEs that are present.
pub fn compute_residuals(pair: &AlignedPair, cfg: &LossConfig) -> Result<ResidualSet, LossError> {
    let sim = pair.sim_all();
    let target = pair.target_all();
    let capacity_mape = metrics::mape(&sim.throughput, &target.throughput)?;
    let voltage_mape = metrics::mape(&sim.voltage, &target.voltage)?;
    let current_mape = metrics::mape(&sim.current, &target.current)?;
    let voltage_rmse = metrics::rmse(&sim.voltage, &target.voltage)?;
    let w = &cfg.channels;
    let parts = [(capacity_mape, w.capacity), (voltage_mape, w.voltage), (current_mape, w.current)];
    let total_mape = if parts.iter().all(|(m, _)| m.is_none()) {
        FAILED_TOTAL_MAPE
    } else {
        parts.iter().filter_map(|(m, w)| m.map(|m| m * w)).sum()
    };
    Ok(ResidualSet { capacity_mape, voltage_rmse: Some(voltage_rmse), voltage_mape, current_mape, total_mape })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::align::{AlignMode, AlignedSegment, Channels};

    fn pair(sim: Channels, target: Channels) -> AlignedPair {
        AlignedPair {
            mode: AlignMode::PerStep,
            segments: vec![AlignedSegment { step: Some(0), kind: None, sim, target }],
            sim_durations: vec![],
            target_durations: vec![],
            sim_steps: vec![0],
            target_steps: vec![0],
        }
    }

    fn ch(v: &[f64], i: &[f64], q: &[f64]) -> Channels {
        Channels { voltage: v.to_vec(), current: i.to_vec(), throughput: q.to_vec() }
    }

    #[test]
    fn identical_channels_give_zero() {
        let c = ch(&[3.0, 3.5], &[1.0, 1.0], &[0.1, 0.2]);
        let r = compute_residuals(&pair(c.clone(), c), &LossConfig::default()).unwrap();
        assert_eq!(r.total_mape, 0.0);
        assert_eq!(r.voltage_rmse, Some(0.0));
    }

    #[test]
    fn constant_voltage_offset() {
        let t = ch(&[3.0, 3.5, 4.0], &[1.0; 3], &[0.1, 0.2, 0.3]);
        let s = ch(&[3.1, 3.6, 4.1], &[1.0; 3], &[0.1, 0.2, 0.3]);
        let r = compute_residuals(&pair(s, t), &LossConfig::default()).unwrap();
        assert!((r.voltage_rmse.unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(r.current_mape, Some(0.0));
    }

    #[test]
    fn ten_percent_everywhere() {
        let t = ch(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]);
        let s = ch(&[1.1, 2.2], &[1.1, 2.2], &[1.1, 2.2]);
        let r = compute_residuals(&pair(s, t), &LossConfig::default()).unwrap();
        assert!((r.voltage_mape.unwrap() - 10.0).abs() < 1e-12);
        assert!((r.total_mape - 10.0).abs() < 1e-12);
    }

    #[test]
    fn masked_channel_is_left_out_of_total() {
        let t = ch(&[1.0, 2.0], &[0.0, 0.0], &[1.0, 2.0]);
        let s = ch(&[1.1, 2.2], &[0.3, 0.0], &[1.1, 2.2]);
        let r = compute_residuals(&pair(s, t), &LossConfig::default()).unwrap();
        assert_eq!(r.current_mape, None);
        assert!((r.total_mape - 20.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn objective_weights_protocols_and_regularizes() {
        let mut cfg = LossConfig::default();
        cfg.protocol_weights.insert("a".into(), 3.0);
        let theta = BTreeMap::from([("k".to_string(), std::f64::consts::E)]);
        let per = vec![("a".to_string(), 1.0), ("b".to_string(), 5.0)];
        assert_eq!(cfg.objective(&per, &theta), 2.0);
        cfg.lambda = 0.5;
        cfg.reference.insert("k".into(), 1.0);
        assert!((cfg.objective(&per, &theta) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_negative_weights() {
        let mut cfg = LossConfig::default();
        cfg.channels.voltage = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = LossConfig::default();
        cfg.channels = ChannelWeights { voltage: 0.0, current: 0.0, capacity: 0.0 };
        assert!(matches!(cfg.validate(), Err(LossError::NoPositiveWeight)));
    }
}
