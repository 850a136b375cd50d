//! Prompt templates. Placeholders are written `{{ name }}`.

use std::collections::BTreeMap;

use crate::feedback::FeedbackPackage;
use crate::memory::format_theta;
use crate::proposer::PromptInputs;

pub const SYSTEM: &str = "You are a battery parameter expert. You know how the parameters of \
electrochemical cell models shape simulated charge and discharge behaviour, and you tune them so \
that a simulation reproduces measured data.";

pub const FIRST_ROUND: &str = "\
- I am fitting a {{ model_name }} battery simulation to measured data by changing model parameters until the simulated current and voltage curves line up with the measured ones.
- Cycling protocol: {{ protocols }}
- First say what you know about how each of the parameters {{ search_keys }} moves the capacity and the shape of the current and voltage curves.
- Then use that knowledge, the rules below and the current simulated results to change the parameters so the simulation moves closer to the measurement.
- Current values: {{ current_params }}. Every other parameter keeps its value from the {{ parameter_set }} set.
{{ picture }}- Comparison with the measurement: {{ cycle_description }}
- The capacity and the length of every step (for example the constant-current charge) should end up equal between simulation and measurement.";

pub const FIRST_ROUND_DEGRADATION: &str = "\
- I am fitting the SEI growth parameters of a {{ model_name }} battery simulation so that the capacity fade and the current and voltage curves of every cycle agree with measured data.
- Both start from the same state, so cycle 1 already agrees; from cycle 2 on the SEI parameters decide the match. Feedback covers cycles {{ cycle_idxs }}.
- Cycling protocol: {{ protocols }}
- First say what you know about how the parameters {{ search_keys }} change the fade of capacity and the current and voltage curves.
- Then change them so the simulated cycles {{ cycle_idxs }} move closer to the measured ones.
- Current values: {{ current_params }}. Every other parameter keeps its value from the {{ parameter_set }} set.
- Comparison with the measurement: {{ cycle_description }}
- Capacity and step durations of each cycle should end up equal between simulation and measurement.";

pub const KNOWLEDGE: &str = "Rules we observed in earlier experiments:\n{{ knowledge }}";

pub const OTHER_ROUND: &str = "Results for the last proposal:\n{{ cycle_description }}";

pub const REPLY_FORMAT: &str = "Change only parameters from this list: {{ search_keys }}. Summarize what \
the results above tell you, then give the next single parameter update as one JSON object mapping \
parameter names to new values. A value is either a number or a string \"*f\" meaning multiply the \
current value by f. You may wrap it as {\"updated_params\": {...}, \"rationale\": \"...\"}.";

pub const SEARCH: &str = "Before fitting I want to learn how the model reacts. Suggest {{ n }} different \
parameter settings to simulate first, changing only parameters from {{ search_keys }}. Current values: \
{{ current_params }}. Reply with a JSON array of {{ n }} objects, each mapping parameter names to \
values, and put no comments inside the JSON.";

pub const SUMMARIZE: &str = "These are the outcomes of exploratory simulations, each compared with the \
unperturbed parameters:\n{{ outcomes }}\n\nState what they reveal as short sensitivity rules, one per \
line, each line starting with \"- \".";

pub const PICTURE_NOTE: &str = "- The attached figure shows current over time on top and voltage over time below; the target is drawn in blue, the simulation in red. Describe how they differ before deciding which way the parameters should move.\n";

pub const REPROMPT: &str = "Please return only valid JSON";

/// Replaces every `{{ key }}` with its value; unknown placeholders are left alone.
pub fn render(template: &str, vars: &BTreeMap<&str, String>) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{{ {k} }}}}"), v);
    }
    out
}

fn fmt_opt(label: &str, v: Option<f64>, unit: &str, out: &mut Vec<String>) {
    if let Some(x) = v {
        out.push(format!("{label} {x:.4}{unit}"));
    }
}

/// Text form of a feedback package.
pub fn describe_feedback(fb: &FeedbackPackage, scalar_only: bool) -> String {
    let r = &fb.residuals;
    if scalar_only {
        return format!("total MAPE {:.4}%", r.total_mape);
    }
    let mut parts = vec![format!("total MAPE {:.4}%", r.total_mape)];
    fmt_opt("voltage MAPE", r.voltage_mape, "%", &mut parts);
    fmt_opt("current MAPE", r.current_mape, "%", &mut parts);
    fmt_opt("capacity MAPE", r.capacity_mape, "%", &mut parts);
    fmt_opt("voltage RMSE", r.voltage_rmse, " V", &mut parts);
    let f = &fb.features;
    fmt_opt("capacity difference (sim - target)", f.capacity_delta_pct, "%", &mut parts);
    fmt_opt("CC charge time difference", f.cc_charge_time_mismatch_s, " s", &mut parts);
    fmt_opt("CV share of charge time difference", f.cv_fraction_delta, "", &mut parts);
    fmt_opt("discharge plateau shift", f.plateau_shift_v, " V", &mut parts);
    fmt_opt("end-of-discharge voltage difference", f.end_voltage_delta_v, " V", &mut parts);
    let mut text = parts.join("; ");
    if !fb.events.is_empty() {
        text.push_str(&format!("; events: {}", fb.events.join(", ")));
    }
    if let Some(cycles) = &fb.cycles {
        for (c, sub) in cycles {
            text.push_str(&format!("\n  cycle {c}: {}", describe_feedback(sub, false)));
        }
    }
    text
}

pub struct Vars<'a> {
    pub prompt: &'a PromptInputs,
    pub theta: &'a BTreeMap<String, f64>,
}

impl Vars<'_> {
    pub fn map(&self) -> BTreeMap<&'static str, String> {
        let p = self.prompt;
        let mut m = BTreeMap::new();
        m.insert("model_name", p.model_name.clone());
        m.insert("protocols", p.protocols.clone());
        m.insert("parameter_set", p.parameter_set.clone());
        m.insert("search_keys", format!("{:?}", p.search_keys));
        m.insert("current_params", format_theta(self.theta));
        m.insert(
            "cycle_idxs",
            p.cycle_idxs.as_ref().map_or_else(String::new, |c| {
                c.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
            }),
        );
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placeholders_are_filled() {
        let vars = BTreeMap::from([("search_keys", "[\"a\"]".to_string()), ("n", "20".to_string())]);
        let text = render(SEARCH, &vars);
        assert!(text.contains("Suggest 20 different"));
        assert!(text.contains("[\"a\"]"));
        assert!(text.contains("{{ current_params }}"));
    }
}
