use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::params::ModelParameters;

use super::ProposerError;

/// Box-bounded search space over named parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub keys: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SearchSpace {
    pub fn new(keys: Vec<String>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ProposerError> {
        if keys.is_empty() {
            return Err(ProposerError::Config("search keys are empty".into()));
        }
        if keys.len() != lower.len() || keys.len() != upper.len() {
            return Err(ProposerError::Config("bounds do not match the search keys".into()));
        }
        for (i, k) in keys.iter().enumerate() {
            if !(lower[i].is_finite() && upper[i].is_finite() && lower[i] <= upper[i]) {
                return Err(ProposerError::Config(format!("`{k}` has bounds [{}, {}]", lower[i], upper[i])));
            }
        }
        Ok(Self { keys, lower, upper })
    }

    /// Bounds taken from the parameter entries.
    pub fn from_params(p: &ModelParameters, keys: &[String]) -> Result<Self, ProposerError> {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for k in keys {
            let e = p.entry(k).ok_or_else(|| ProposerError::Config(format!("unknown search key `{k}`")))?;
            lower.push(e.lower);
            upper.push(e.upper);
        }
        Self::new(keys.to_vec(), lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.keys.len()
    }

    /// Whether coordinate `i` is searched on a log scale (strictly positive bounds).
    pub fn is_log(&self, i: usize) -> bool {
        self.lower[i] > 0.0 && self.upper[i] > self.lower[i]
    }

    fn scale(&self, i: usize, u: f64, log: bool) -> f64 {
        let (lo, hi) = (self.lower[i], self.upper[i]);
        let u = u.clamp(0.0, 1.0);
        if lo == hi {
            return lo;
        }
        let v = if log && self.is_log(i) { (lo.ln() + u * (hi / lo).ln()).exp() } else { lo + u * (hi - lo) };
        v.clamp(lo, hi)
    }

    fn unscale(&self, i: usize, v: f64, log: bool) -> f64 {
        let (lo, hi) = (self.lower[i], self.upper[i]);
        if lo == hi {
            return 0.5;
        }
        let u = if log && self.is_log(i) { (v / lo).ln() / (hi / lo).ln() } else { (v - lo) / (hi - lo) };
        u.clamp(0.0, 1.0)
    }

    /// Maps a point of the unit cube to parameter values.
    pub fn from_unit(&self, u: &[f64], log: bool) -> BTreeMap<String, f64> {
        self.keys.iter().enumerate().map(|(i, k)| (k.clone(), self.scale(i, u[i], log))).collect()
    }

    /// Inverse of [`from_unit`](Self::from_unit); missing keys map to the centre.
    pub fn to_unit(&self, theta: &BTreeMap<String, f64>, log: bool) -> Vec<f64> {
        self.keys
            .iter()
            .enumerate()
            .map(|(i, k)| theta.get(k).map_or(0.5, |v| self.unscale(i, *v, log)))
            .collect()
    }

    pub fn contains(&self, theta: &BTreeMap<String, f64>) -> bool {
        self.keys
            .iter()
            .enumerate()
            .all(|(i, k)| theta.get(k).is_some_and(|v| *v >= self.lower[i] && *v <= self.upper[i]))
    }
}
