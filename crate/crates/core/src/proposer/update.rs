//! Parameter updates: parsing proposer output and projecting it onto the
//! feasible set.

use std::collections::BTreeMap;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::params::ModelParameters;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Directive {
    Absolute(f64),
    /// Written as `"*x"`.
    Multiplicative(f64),
}

impl Directive {
    pub fn target(self, current: f64) -> f64 {
        match self {
            Directive::Absolute(v) => v,
            Directive::Multiplicative(f) => current * f,
        }
    }

    fn from_value(key: &str, v: &Value) -> Result<Self, UpdateError> {
        let bad = || UpdateError::InvalidValue { key: key.to_string(), value: v.to_string() };
        let d = match v {
            Value::Number(n) => Directive::Absolute(n.as_f64().ok_or_else(bad)?),
            Value::String(s) => {
                let s = s.trim();
                match s.strip_prefix('*') {
                    Some(rest) => Directive::Multiplicative(rest.trim().parse().map_err(|_| bad())?),
                    None => Directive::Absolute(s.parse().map_err(|_| bad())?),
                }
            }
            _ => return Err(bad()),
        };
        match d {
            Directive::Absolute(x) if !x.is_finite() => Err(bad()),
            Directive::Multiplicative(f) if !(f > 0.0) || !f.is_finite() => {
                Err(UpdateError::NonPositiveFactor { key: key.to_string(), factor: f })
            }
            _ => Ok(d),
        }
    }
}

impl Serialize for Directive {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Directive::Absolute(v) => s.serialize_f64(*v),
            Directive::Multiplicative(f) => s.serialize_str(&format!("*{f}")),
        }
    }
}

impl<'de> Deserialize<'de> for Directive {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Directive::from_value("value", &v).map_err(de::Error::custom)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UpdateError {
    #[error("no JSON object found in response")]
    NoJson,
    #[error("update names no parameters")]
    Empty,
    #[error("parameters outside the search keys: {0:?}")]
    RejectedKeys(Vec<String>),
    #[error("`{key}`: cannot read {value} as a value or \"*factor\"")]
    InvalidValue { key: String, value: String },
    #[error("`{key}`: factor {factor} must be positive")]
    NonPositiveFactor { key: String, factor: f64 },
    #[error("step size {0} must lie in (0, 1]")]
    BadStepSize(f64),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterUpdate {
    #[serde(rename = "updated_params")]
    pub params: BTreeMap<String, Directive>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

impl ParameterUpdate {
    /// Absolute assignments for every entry of `values`.
    pub fn absolute(values: &BTreeMap<String, f64>) -> Self {
        Self { params: values.iter().map(|(k, v)| (k.clone(), Directive::Absolute(*v))).collect(), rationale: None }
    }

    pub fn with_rationale(mut self, text: impl Into<String>) -> Self {
        self.rationale = Some(text.into());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("update serializes")
    }
}

/// The JSON value opening with `open` that ends last in `text`; among values
/// ending at the same place, the outermost.
fn last_json_value(text: &str, open: char) -> Option<Value> {
    let mut best: Option<(usize, usize, Value)> = None;
    for (start, _) in text.match_indices(open) {
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        if let Some(Ok(v)) = stream.next() {
            let end = start + stream.byte_offset();
            let better = match &best {
                None => true,
                Some((s, e, _)) => end > *e || (end == *e && start < *s),
            };
            if better {
                best = Some((start, end, v));
            }
        }
    }
    best.map(|(_, _, v)| v)
}

/// Reads an update from free text. Accepts `{"updated_params": {...},
/// "rationale": "..."}` or a bare `{name: value}` object; values are numbers
/// (absolute) or `"*x"` strings (multiplicative). Names outside `search_keys`
/// are rejected; an empty `search_keys` accepts any name.
pub fn parse_update(text: &str, search_keys: &[String]) -> Result<ParameterUpdate, UpdateError> {
    let obj = last_json_value(text, '{')
        .and_then(|v| match v {
            Value::Object(m) => Some(m),
            _ => None,
        })
        .ok_or(UpdateError::NoJson)?;
    parse_object(obj, search_keys)
}

fn parse_object(mut obj: serde_json::Map<String, Value>, search_keys: &[String]) -> Result<ParameterUpdate, UpdateError> {
    let rationale = match obj.get("rationale") {
        Some(Value::String(s)) => Some(s.clone()),
        _ => None,
    };
    let entries = match obj.remove("updated_params") {
        Some(Value::Object(inner)) => inner,
        Some(_) => return Err(UpdateError::Empty),
        None => {
            obj.remove("rationale");
            obj
        }
    };
    let mut params = BTreeMap::new();
    for (k, v) in &entries {
        params.insert(k.clone(), Directive::from_value(k, v)?);
    }
    if params.is_empty() {
        return Err(UpdateError::Empty);
    }
    if !search_keys.is_empty() {
        let rejected: Vec<String> = params.keys().filter(|k| !search_keys.contains(k)).cloned().collect();
        if !rejected.is_empty() {
            return Err(UpdateError::RejectedKeys(rejected));
        }
    }
    Ok(ParameterUpdate { params, rationale })
}

/// Reads a list of updates: the last JSON array of objects in `text`, or
/// failing that the first array of objects inside the last JSON object.
/// Entries that do not parse are skipped; an error is returned only when
/// none do.
pub fn parse_update_batch(text: &str, search_keys: &[String]) -> Result<Vec<ParameterUpdate>, UpdateError> {
    let objects = |v: Value| -> Option<Vec<serde_json::Map<String, Value>>> {
        match v {
            Value::Array(items) if !items.is_empty() => items
                .into_iter()
                .map(|i| match i {
                    Value::Object(m) => Some(m),
                    _ => None,
                })
                .collect(),
            _ => None,
        }
    };
    let list = last_json_value(text, '[').and_then(objects).or_else(|| match last_json_value(text, '{') {
        Some(Value::Object(m)) => m.into_iter().find_map(|(_, v)| objects(v)),
        _ => None,
    });
    let list = list.ok_or(UpdateError::NoJson)?;
    let mut first_err = None;
    let mut out = Vec::new();
    for obj in list {
        match parse_object(obj, search_keys) {
            Ok(u) => out.push(u),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if out.is_empty() {
        return Err(first_err.unwrap_or(UpdateError::Empty));
    }
    Ok(out)
}

pub const PROJECTED_EVENT: &str = "projected_to_feasible";

/// Applies `u` with step size `eta`: each value moves a fraction `eta` of the
/// way to its target and is clamped to its bounds. If the combined set is
/// still invalid, the whole step is shortened by bisection until it is, and
/// an event is returned.
pub fn apply_update(
    theta: &ModelParameters,
    u: &ParameterUpdate,
    eta: f64,
) -> Result<(ModelParameters, Vec<String>), UpdateError> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(UpdateError::BadStepSize(eta));
    }
    let mut start = BTreeMap::new();
    let mut goal = BTreeMap::new();
    let unknown: Vec<String> = u.params.keys().filter(|k| theta.entry(k).is_none()).cloned().collect();
    if !unknown.is_empty() {
        return Err(UpdateError::RejectedKeys(unknown));
    }
    for (k, d) in &u.params {
        let entry = theta.entry(k).expect("checked above");
        let old = entry.value;
        let moved = old + eta * (d.target(old) - old);
        start.insert(k.clone(), old);
        goal.insert(k.clone(), entry.clamp(moved));
    }
    let at = |alpha: f64| {
        let mut p = theta.clone();
        for (k, g) in &goal {
            let s = start[k];
            let v = if alpha >= 1.0 { *g } else { s + alpha * (g - s) };
            p.set(k, v).expect("key exists");
        }
        p
    };
    let full = at(1.0);
    if full.validate().is_ok() {
        return Ok((full, Vec::new()));
    }
    if theta.validate().is_err() {
        return Ok((theta.clone(), vec![PROJECTED_EVENT.to_string()]));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if at(mid).validate().is_ok() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((at(lo), vec![PROJECTED_EVENT.to_string()]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{names, PhysicalParameterSet};

    const RATE: &str = "Positive electrode reaction rate [s^-1]";

    fn keys(k: &[&str]) -> Vec<String> {
        k.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn multiplicative_string_form() {
        let text = r#"{"updated_params": {"Positive electrode reaction rate [s^-1]": "*1.2"}, "rationale": "faster kinetics"}"#;
        let u = parse_update(text, &keys(&[RATE])).unwrap();
        assert_eq!(u.params[RATE], Directive::Multiplicative(1.2));
        assert_eq!(u.rationale.as_deref(), Some("faster kinetics"));
    }

    #[test]
    fn bare_dict_is_absolute() {
        let u = parse_update(r#"{"Negative electrode porosity": 0.35}"#, &[]).unwrap();
        assert_eq!(u.params["Negative electrode porosity"], Directive::Absolute(0.35));
    }

    #[test]
    fn last_object_in_prose_wins() {
        let text = "First I thought {\"a\": 1} but then\n```json\n{\"b\": \"*0.9\", \"rationale\": \"r\"}\n```\nDone.";
        let u = parse_update(text, &[]).unwrap();
        assert_eq!(u.params.len(), 1);
        assert_eq!(u.params["b"], Directive::Multiplicative(0.9));
    }

    #[test]
    fn errors() {
        assert_eq!(parse_update("no json here", &[]), Err(UpdateError::NoJson));
        assert!(matches!(parse_update(r#"{"x": 1}"#, &keys(&["y"])), Err(UpdateError::RejectedKeys(k)) if k == ["x"]));
        assert!(matches!(parse_update(r#"{"x": "*-2"}"#, &[]), Err(UpdateError::NonPositiveFactor { .. })));
        assert!(matches!(parse_update(r#"{"x": "fast"}"#, &[]), Err(UpdateError::InvalidValue { .. })));
        assert_eq!(parse_update(r#"{"updated_params": {}}"#, &[]), Err(UpdateError::Empty));
    }

    #[test]
    fn batch_forms() {
        let text = "Here you go:\n[{\"a\": 1.0}, {\"a\": \"*1.1\"}, {\"a\": \"bad\"}]";
        let b = parse_update_batch(text, &[]).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[1].params["a"], Directive::Multiplicative(1.1));
        let wrapped = r#"{"groups": [{"updated_params": {"a": 2}}, {"a": 3}]}"#;
        assert_eq!(parse_update_batch(wrapped, &[]).unwrap().len(), 2);
        assert_eq!(parse_update_batch("[1, 2]", &[]), Err(UpdateError::NoJson));
        assert!(matches!(parse_update_batch(r#"[{"b": 1}]"#, &keys(&["a"])), Err(UpdateError::RejectedKeys(_))));
    }

    #[test]
    fn serialize_then_parse_is_identity() {
        let mut params = BTreeMap::new();
        params.insert("a".to_string(), Directive::Absolute(5.86e-6));
        params.insert("b".to_string(), Directive::Multiplicative(1.0 / 3.0));
        let u = ParameterUpdate { params, rationale: Some("because".into()) };
        assert_eq!(parse_update(&u.to_json(), &[]).unwrap(), u);
    }

    fn model() -> ModelParameters {
        ModelParameters::new(PhysicalParameterSet::default_set(), None)
    }

    #[test]
    fn full_step_assigns_exactly() {
        let u = ParameterUpdate::absolute(&BTreeMap::from([(names::NEG_POROSITY.to_string(), 0.3)]));
        let (p, ev) = apply_update(&model(), &u, 1.0).unwrap();
        assert_eq!(p.get(names::NEG_POROSITY).unwrap(), 0.3);
        assert!(ev.is_empty());
    }

    #[test]
    fn large_factor_is_clamped_to_bound() {
        let m = model();
        let upper = m.entry(names::NEG_PARTICLE_RADIUS).unwrap().upper;
        let u = ParameterUpdate {
            params: BTreeMap::from([(names::NEG_PARTICLE_RADIUS.to_string(), Directive::Multiplicative(10.0))]),
            rationale: None,
        };
        let (p, _) = apply_update(&m, &u, 1.0).unwrap();
        assert_eq!(p.get(names::NEG_PARTICLE_RADIUS).unwrap(), upper);
    }

    #[test]
    fn half_step_damps() {
        let m = model();
        let t = m.get(names::ELECTRODE_HEIGHT).unwrap();
        let u = ParameterUpdate::absolute(&BTreeMap::from([(names::ELECTRODE_HEIGHT.to_string(), t + 0.02)]));
        let (p, _) = apply_update(&m, &u, 0.5).unwrap();
        assert!((p.get(names::ELECTRODE_HEIGHT).unwrap() - (t + 0.01)).abs() < 1e-15);
        assert!(apply_update(&m, &u, 0.0).is_err());
        assert!(apply_update(&m, &u, 1.5).is_err());
    }

    #[test]
    fn infeasible_combination_is_shortened() {
        // porosity 0.6 with active fraction 0.65 sums above one
        let m = model();
        let u = ParameterUpdate::absolute(&BTreeMap::from([(names::NEG_POROSITY.to_string(), 0.6)]));
        let (p, ev) = apply_update(&m, &u, 1.0).unwrap();
        assert_eq!(ev, vec![PROJECTED_EVENT.to_string()]);
        p.validate().unwrap();
        let e = p.get(names::NEG_POROSITY).unwrap();
        assert!(e <= 0.35 + 1e-12 && e > 0.35 - 1e-9, "{e}");
    }
}
