use std::collections::BTreeMap;

use super::{KnowledgeEntry, RoundRecord};
use crate::feedback::SUCCESS_EVENT;

/// Capacity effects below this many percent count as negligible.
pub const NEGLIGIBLE_PCT: f64 = 0.1;
const CC_TIME_TOLERANCE_S: f64 = 1.0;

pub fn magnitude_class(delta_pct: f64) -> &'static str {
    let a = delta_pct.abs();
    if a < NEGLIGIBLE_PCT {
        "negligibly"
    } else if a < 1.0 {
        "slightly"
    } else if a < 5.0 {
        "moderately"
    } else {
        "strongly"
    }
}

fn signed_pct(x: f64) -> String {
    format!("{:+.1}%", 100.0 * x)
}

/// Parameter with the largest relative move away from `theta_init`, its
/// fractional change and how many other keys moved.
fn dominant(theta_init: &BTreeMap<String, f64>, r: &RoundRecord) -> Option<(String, f64, usize)> {
    let mut moved: Vec<(String, f64)> = r
        .theta
        .iter()
        .filter_map(|(k, v)| {
            let base = *theta_init.get(k)?;
            (base != 0.0 && *v != base).then(|| (k.clone(), v / base - 1.0))
        })
        .collect();
    if moved.is_empty() {
        return None;
    }
    moved.sort_by(|a, b| (1.0 + b.1).ln().abs().total_cmp(&(1.0 + a.1).ln().abs()).then(a.0.cmp(&b.0)));
    let n = moved.len() - 1;
    let (k, f) = moved.swap_remove(0);
    Some((k, f, n))
}

/// Turns warm-up outcomes into sensitivity rules, one per record. Each rule
/// names the parameter that moved most and compares against `baseline`, the
/// unperturbed evaluation (the target itself when absent).
pub fn summarize_warmup(
    theta_init: &BTreeMap<String, f64>,
    baseline: Option<&RoundRecord>,
    warmup: &[RoundRecord],
) -> Vec<KnowledgeEntry> {
    let base_cap = baseline.and_then(|b| b.features.capacity_delta_pct).unwrap_or(0.0);
    let base_cc = baseline.and_then(|b| b.features.cc_charge_time_mismatch_s).unwrap_or(0.0);
    let base_total = baseline.map(|b| b.residuals.total_mape);
    let mut out = Vec::new();
    for r in warmup {
        let Some((key, frac, others)) = dominant(theta_init, r) else { continue };
        let mut subject = format!("perturbing {key} by {}", signed_pct(frac));
        if others > 0 {
            subject.push_str(&format!(" (with {others} other parameter{} changed)", if others == 1 { "" } else { "s" }));
        }
        if !r.succeeded() {
            let why = r.events.iter().find(|e| *e != SUCCESS_EVENT).map_or("unknown", String::as_str);
            out.push(KnowledgeEntry::learned(
                format!("{subject} causes simulation failure ({why})"),
                "warmup",
                Some(r.round),
                1.0,
            ));
            continue;
        }
        let text = match r.features.capacity_delta_pct {
            Some(cap) => {
                let d = cap - base_cap;
                let cap_part = if d.abs() < NEGLIGIBLE_PCT {
                    format!("had a negligible effect on capacity ({d:+.3}%)")
                } else {
                    let dir = if d > 0.0 { "increased" } else { "decreased" };
                    format!("{} {dir} capacity ({d:+.2}%)", magnitude_class(d))
                };
                let cc_part = r.features.cc_charge_time_mismatch_s.map(|cc| {
                    let dc = cc - base_cc;
                    if dc.abs() < CC_TIME_TOLERANCE_S {
                        "left the CC charge time unchanged".to_string()
                    } else if dc > 0.0 {
                        format!("lengthened the CC charge time ({dc:+.0} s)")
                    } else {
                        format!("shortened the CC charge time ({dc:+.0} s)")
                    }
                });
                match cc_part {
                    Some(c) => format!("{subject} {cap_part} and {c}"),
                    None => format!("{subject} {cap_part}"),
                }
            }
            None => match base_total {
                Some(b) => format!("{subject} changed the total MAPE by {:+.3} percentage points", r.residuals.total_mape - b),
                None => format!("{subject} gave a total MAPE of {:.3}%", r.residuals.total_mape),
            },
        };
        let salience = r.features.capacity_delta_pct.map_or(0.0, |c| (c - base_cap).abs());
        out.push(KnowledgeEntry::learned(text, "warmup", Some(r.round), salience));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::FeatureSet;
    use crate::memory::tests::record;

    const WIDTH: &str = "Electrode width [m]";

    fn warm(round: usize, width: f64, cap: f64, cc: Option<f64>, ok: bool) -> RoundRecord {
        let mut r = record(round, 1.0, ok);
        r.theta = BTreeMap::from([(WIDTH.to_string(), width)]);
        r.features = FeatureSet { capacity_delta_pct: Some(cap), cc_charge_time_mismatch_s: cc, ..Default::default() };
        r
    }

    #[test]
    fn wider_electrode_rule_says_capacity_increases() {
        let init = BTreeMap::from([(WIDTH.to_string(), 1.0)]);
        let base = warm(0, 1.0, -2.0, Some(-50.0), true);
        let rules = summarize_warmup(&init, Some(&base), &[warm(1, 1.1, 8.0, Some(300.0), true)]);
        assert_eq!(rules.len(), 1);
        let t = &rules[0].text;
        assert!(t.contains("perturbing Electrode width [m] by +10.0%"), "{t}");
        assert!(t.contains("strongly increased capacity (+10.00%)"), "{t}");
        assert!(t.contains("lengthened the CC charge time"), "{t}");
    }

    #[test]
    fn failure_and_negligible_rules() {
        let init = BTreeMap::from([(WIDTH.to_string(), 1.0)]);
        let rules = summarize_warmup(&init, None, &[warm(1, 0.8, 0.0, None, false), warm(2, 1.01, 0.05, None, true)]);
        assert!(rules[0].text.contains("causes simulation failure (solver_failure@step1)"));
        assert!(rules[0].text.contains("by -20.0%"));
        assert!(rules[1].text.contains("negligible effect on capacity"));
    }

    #[test]
    fn unchanged_record_yields_no_rule() {
        let init = BTreeMap::from([(WIDTH.to_string(), 1.0)]);
        assert!(summarize_warmup(&init, None, &[warm(1, 1.0, 3.0, None, true)]).is_empty());
    }

    #[test]
    fn classes() {
        assert_eq!(magnitude_class(0.05), "negligibly");
        assert_eq!(magnitude_class(-0.5), "slightly");
        assert_eq!(magnitude_class(2.0), "moderately");
        assert_eq!(magnitude_class(-7.0), "strongly");
    }
}
