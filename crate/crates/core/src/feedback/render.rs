//! Overlay plot of simulated and target traces as SVG.

use std::fmt::Write as _;
use std::path::Path;

use crate::sim::SimulationTrace;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const GAP: f64 = 50.0;
const BOTTOM: f64 = 50.0;
const TARGET_COLOR: &str = "#1f77b4";
const SIM_COLOR: &str = "#d62728";
// polylines longer than this are thinned by striding
const MAX_POINTS: usize = 1500;

struct Panel {
    top: f64,
    height: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Panel {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        self.top + self.height - (y - self.y.0) / (self.y.1 - self.y.0) * self.height
    }
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn polyline(out: &mut String, panel: &Panel, xs: &[f64], ys: &[f64], color: &str, id: &str) {
    let stride = xs.len().div_ceil(MAX_POINTS).max(1);
    let mut pts = String::new();
    let mut idx: Vec<usize> = (0..xs.len()).step_by(stride).collect();
    if idx.last() != Some(&(xs.len() - 1)) {
        idx.push(xs.len() - 1);
    }
    for (n, i) in idx.into_iter().enumerate() {
        if n > 0 {
            pts.push(' ');
        }
        let _ = write!(pts, "{:.2},{:.2}", panel.px(xs[i] / 3600.0), panel.py(ys[i]));
    }
    let _ = writeln!(
        out,
        r#"<polyline id="{id}" fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>"#
    );
}

fn axes(out: &mut String, panel: &Panel, label: &str) {
    let x0 = LEFT;
    let x1 = WIDTH - RIGHT;
    let y1 = panel.top + panel.height;
    let _ = writeln!(
        out,
        r##"<rect x="{x0:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
        panel.top,
        x1 - x0,
        panel.height
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let yv = panel.y.0 + f * (panel.y.1 - panel.y.0);
        let xv = panel.x.0 + f * (panel.x.1 - panel.x.0);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{yv:.3}</text>"#,
            x0 - 6.0,
            panel.py(yv) + 4.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{xv:.2}</text>"#,
            panel.px(xv),
            y1 + 15.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="start">{label}</text>"#,
        x0,
        panel.top - 8.0
    );
}

/// SVG document with current (top) and voltage (bottom) against time in
/// hours. An empty `sim` draws the target alone with a note.
pub fn overlay_svg(sim: &SimulationTrace, target: &SimulationTrace) -> String {
    overlay(sim, target, "simulation produced no samples")
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn overlay(sim: &SimulationTrace, target: &SimulationTrace, note: &str) -> String {
    let has_sim = !sim.is_empty();
    let all_t = target.time.iter().chain(if has_sim { sim.time.iter() } else { [].iter() });
    let x = span(all_t.map(|t| t / 3600.0));
    let h = (HEIGHT - TOP - GAP - BOTTOM) / 2.0;
    let pick = |f: fn(&SimulationTrace) -> &Vec<f64>| {
        let mut v: Vec<f64> = f(target).clone();
        if has_sim {
            v.extend(f(sim));
        }
        span(v.into_iter())
    };
    let current = Panel { top: TOP, height: h, x, y: pick(|t| &t.current) };
    let voltage = Panel { top: TOP + h + GAP, height: h, x, y: pick(|t| &t.voltage) };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    axes(&mut out, &current, "Current [A] vs time [h]");
    axes(&mut out, &voltage, "Voltage [V] vs time [h]");
    if !target.is_empty() {
        polyline(&mut out, &current, &target.time, &target.current, TARGET_COLOR, "target-current");
        polyline(&mut out, &voltage, &target.time, &target.voltage, TARGET_COLOR, "target-voltage");
    }
    if has_sim {
        polyline(&mut out, &current, &sim.time, &sim.current, SIM_COLOR, "sim-current");
        polyline(&mut out, &voltage, &sim.time, &sim.voltage, SIM_COLOR, "sim-voltage");
    } else {
        let _ = writeln!(
            out,
            r#"<text id="no-sim" x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle" fill="{SIM_COLOR}">{}</text>"#,
            WIDTH / 2.0,
            TOP + h / 2.0,
            escape(note)
        );
    }
    let ly = HEIGHT - 12.0;
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{ly:.2}" font-size="12" fill="{TARGET_COLOR}">target</text>"#,
        WIDTH - 200.0
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{ly:.2}" font-size="12" fill="{SIM_COLOR}">simulated</text>"#,
        WIDTH - 120.0
    );
    out.push_str("</svg>\n");
    out
}

pub fn render_overlay(sim: &SimulationTrace, target: &SimulationTrace, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, overlay_svg(sim, target))
}

/// Target-only overlay for a round whose simulation failed outright.
pub fn render_failed(target: &SimulationTrace, reason: &str, path: &Path) -> std::io::Result<()> {
    let note = format!("simulation failed: {reason}");
    std::fs::write(path, overlay(&SimulationTrace::empty(), target, &note))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::TerminationEvent;

    fn trace(n: usize, shift: f64) -> SimulationTrace {
        let time: Vec<f64> = (0..n).map(|i| 10.0 * i as f64).collect();
        let mut t = SimulationTrace {
            voltage: time.iter().map(|x| 4.0 - 1e-4 * x + shift).collect(),
            current: vec![2.9; n],
            capacity: vec![0.0; n],
            step_index: vec![0; n],
            time,
            step_durations: vec![],
            event: TerminationEvent::VoltageCutoff,
            failure: None,
            discharge_capacity_ah: 0.0,
        };
        t.rebuild_summaries();
        t
    }

    #[test]
    fn identical_traces_draw_both_series() {
        let t = trace(50, 0.0);
        let svg = overlay_svg(&t, &t);
        assert!(svg.contains("id=\"target-voltage\"") && svg.contains("id=\"sim-voltage\""));
        assert!(svg.contains("id=\"target-current\"") && svg.contains("id=\"sim-current\""));
    }

    #[test]
    fn empty_sim_is_annotated() {
        let svg = overlay_svg(&trace(0, 0.0), &trace(50, 0.0));
        assert!(svg.contains("id=\"no-sim\""));
        assert!(!svg.contains("sim-voltage"));
    }

    #[test]
    fn failed_round_names_the_reason() {
        let dir = std::env::temp_dir().join(format!("render-failed-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("f.svg");
        render_failed(&trace(20, 0.0), "radius <= 0", &path).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert!(svg.contains("simulation failed: radius &lt;= 0"));
        assert!(svg.contains("target-voltage") && !svg.contains("sim-voltage"));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn output_is_deterministic() {
        let a = overlay_svg(&trace(3000, 0.01), &trace(2000, 0.0));
        let b = overlay_svg(&trace(3000, 0.01), &trace(2000, 0.0));
        assert_eq!(a, b);
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let t = trace(5, 0.0);
        assert!(render_overlay(&t, &t, Path::new("/nonexistent-dir/x/plot.svg")).is_err());
    }
}
