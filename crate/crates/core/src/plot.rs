//! Minimal SVG line charts for deviation traces and rho sweeps.

use std::fmt::Write as _;

use crate::scoring::DeviationTrace;
use crate::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 45.0;
const TICKS: usize = 5;

/// A single-series line chart with optional vertical separators.
#[derive(Debug, Clone, Default)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
    /// x positions of dashed vertical lines.
    pub separators: Vec<f64>,
    pub markers: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

fn tick_label(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e9 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

impl LineChart {
    pub fn to_svg(&self) -> Result<String> {
        if self.points.is_empty() {
            return Err(Error::invalid("nothing to plot"));
        }
        if self.points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::numeric("plot points must be finite"));
        }
        let (x0, x1) = span(self.points.iter().map(|p| p.0).chain(self.separators.iter().copied()));
        let (y_min, y_max) = span(self.points.iter().map(|p| p.1));
        let (y0, y1) = (y_min.min(0.0), y_max);
        let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
        let sy = |y: f64| MARGIN_TOP + (1.0 - (y - y0) / (y1 - y0)) * plot_h;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let (bottom, right) = (MARGIN_TOP + plot_h, MARGIN_LEFT + plot_w);
        let _ = writeln!(
            s,
            r#"<path d="M{MARGIN_LEFT:.1},{MARGIN_TOP:.1} V{bottom:.1} H{right:.1}" fill="none" stroke="black"/>"#
        );
        for i in 0..=TICKS {
            let f = i as f64 / TICKS as f64;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let (px, py) = (sx(xv), sy(yv));
            let _ = writeln!(
                s,
                r#"<line x1="{px:.1}" y1="{bottom:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/><text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                bottom + 4.0,
                bottom + 16.0,
                tick_label(xv)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{py:.1}" x2="{MARGIN_LEFT:.1}" y2="{py:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                MARGIN_LEFT - 4.0,
                MARGIN_LEFT - 6.0,
                py + 4.0,
                tick_label(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            MARGIN_LEFT + plot_w / 2.0,
            HEIGHT - 8.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
            MARGIN_TOP + plot_h / 2.0,
            MARGIN_TOP + plot_h / 2.0,
            escape(&self.y_label)
        );
        for x in &self.separators {
            let px = sx(*x);
            let _ = writeln!(
                s,
                r#"<line class="separator" x1="{px:.1}" y1="{MARGIN_TOP:.1}" x2="{px:.1}" y2="{bottom:.1}" stroke="red" stroke-dasharray="4 3"/>"#
            );
        }
        let path: Vec<String> = self.points.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" points="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#,
            path.join(" ")
        );
        if self.markers {
            for (x, y) in &self.points {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, sx(*x), sy(*y));
            }
        }
        s.push_str("</svg>\n");
        Ok(s)
    }
}

/// Distance against timestep for one trajectory, with dashed lines at the
/// subtask boundaries.
pub fn trace_svg(trace: &DeviationTrace, boundaries: &[usize]) -> Result<String> {
    LineChart {
        title: format!("Mahalanobis deviation: {}", trace.trajectory_id),
        x_label: "timestep".into(),
        y_label: "distance".into(),
        points: trace.records.iter().map(|r| (r.t as f64, r.distance)).collect(),
        separators: boundaries.iter().map(|b| *b as f64).collect(),
        markers: false,
    }
    .to_svg()
}

/// Mean full-task success against the pruning budget.
pub fn sweep_svg(means: &[(usize, f64)]) -> Result<String> {
    LineChart {
        title: "Success vs pruning budget".into(),
        x_label: "rho".into(),
        y_label: "full-task success".into(),
        points: means.iter().map(|(r, s)| (*r as f64, *s)).collect(),
        separators: Vec::new(),
        markers: true,
    }
    .to_svg()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::TraceRecord;

    fn trace() -> DeviationTrace {
        DeviationTrace {
            trajectory_id: "traj_<1>".into(),
            records: (0..10)
                .map(|t| TraceRecord {
                    t,
                    subtask_index: if t < 4 { 1 } else { 2 },
                    distance: (t as f64 * 0.7).sin() + 1.5,
                })
                .collect(),
        }
    }

    #[test]
    fn trace_has_one_separator_per_boundary() {
        let svg = trace_svg(&trace(), &[4]).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches(r#"class="separator""#).count(), 1);
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.contains("traj_&lt;1&gt;"));
        let series = svg.lines().find(|l| l.contains(r#"class="series""#)).unwrap();
        assert_eq!(series.matches(',').count(), 10);
    }

    #[test]
    fn sweep_plot_marks_every_rho() {
        let svg = sweep_svg(&[(0, 0.2), (6, 0.8), (12, 0.9)]).unwrap();
        assert_eq!(svg.matches("<circle").count(), 3);
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(sweep_svg(&[]).is_err());
        assert!(sweep_svg(&[(0, f64::NAN)]).is_err());
    }

    #[test]
    fn output_is_deterministic_and_flat_series_render() {
        let a = sweep_svg(&[(0, 1.0), (6, 1.0)]).unwrap();
        assert_eq!(a, sweep_svg(&[(0, 1.0), (6, 1.0)]).unwrap());
        assert!(!a.contains("NaN"));
    }
}
