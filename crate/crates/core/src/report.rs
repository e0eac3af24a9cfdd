//! Output files: JSON records, CSV tables and static SVG line plots.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{JflowError, Result};
use crate::flow::FlowRun;
use crate::geometry::{BackendKind, GeometryBackend};

/// Final state of a flow run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalState {
    pub backend: BackendKind,
    pub shape: Vec<usize>,
    /// `converged`, `non-convergence` or `step-stalled`.
    pub status: String,
    pub t: f64,
    /// Last step size.
    pub dt: f64,
    pub steps: usize,
    pub rejected_steps: usize,
    pub c: f64,
    pub subsolution_margin: f64,
    pub residual: f64,
    #[serde(rename = "E")]
    pub e: f64,
    pub suspect: bool,
    /// Grid coordinates: `x` on the torus (first axis), `s = log|z|²` on the sphere.
    pub coordinates: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
    pub phi_normalized: Vec<f64>,
}

impl FinalState {
    pub fn new(run: &FlowRun, b: &GeometryBackend) -> Self {
        let last = run.final_row();
        Self {
            backend: b.kind(),
            shape: b.shape().to_vec(),
            status: run.status.name().into(),
            t: last.t,
            dt: last.dt,
            steps: last.step,
            rejected_steps: run.rejected_steps,
            c: run.c,
            subsolution_margin: run.subsolution_margin,
            residual: last.residual,
            e: last.e,
            suspect: run.suspect(),
            coordinates: (0..b.dim()).map(|a| b.coordinates(a).to_vec()).collect(),
            phi: run.final_phi.values().to_vec(),
            phi_normalized: run.final_phi_normalized.values().to_vec(),
        }
    }
}

/// Pretty JSON; non-finite numbers become `null`.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)
        .map_err(|e| JflowError::Io(std::io::Error::new(e.kind(), format!("cannot write {}: {e}", path.display()))))
}

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl LinePlot {
    fn transform(&self, y: f64) -> Option<f64> {
        let y = if self.log_y { (y > 0.0).then(|| y.log10())? } else { y };
        y.is_finite().then_some(y)
    }

    /// One `<polyline>` per series; points that cannot be drawn are skipped.
    pub fn to_svg(&self) -> String {
        let drawn: Vec<Vec<(f64, f64)>> = self
            .series
            .iter()
            .map(|s| {
                s.points
                    .iter()
                    .filter(|(x, _)| x.is_finite())
                    .filter_map(|&(x, y)| self.transform(y).map(|y| (x, y)))
                    .collect()
            })
            .collect();
        let all = drawn.iter().flatten();
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in all {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 <= 0.0 {
            x1 = x0 + 1.0;
        }
        if y1 - y0 <= 0.0 {
            let pad = y0.abs().max(1.0) * 1e-3;
            (y0, y1) = (y0 - pad, y1 + pad);
        }
        let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            WIDTH - 2.0 * MARGIN,
            HEIGHT - 2.0 * MARGIN
        );
        let y_label = if self.log_y { format!("log10 {}", self.y_label) } else { self.y_label.clone() };
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 20.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&y_label)
        );
        for value in [x0, x1] {
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="10">{value:.4e}</text>"#,
                px(value),
                HEIGHT - MARGIN + 16.0
            );
        }
        for value in [y0, y1] {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="10">{value:.4e}</text>"#,
                MARGIN - 4.0,
                py(value)
            );
        }
        for (k, (series, points)) in self.series.iter().zip(&drawn).enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let coords: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline data-series="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                escape(&series.name),
                coords.join(" ")
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
                WIDTH - MARGIN - 120.0,
                MARGIN + 16.0 + 14.0 * k as f64,
                escape(&series.name)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_polyline_per_series() {
        let plot = LinePlot {
            title: "a < b".into(),
            x_label: "t".into(),
            y_label: "y".into(),
            log_y: true,
            series: vec![
                Series { name: "one".into(), points: vec![(0.0, 1.0), (1.0, 0.1), (2.0, -1.0)] },
                Series { name: "two".into(), points: vec![(0.0, f64::NAN), (1.0, 2.0)] },
                Series { name: "three".into(), points: vec![] },
            ],
        };
        let svg = plot.to_svg();
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("a &lt; b"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn json_nulls_non_finite() {
        #[derive(Serialize)]
        struct S {
            x: f64,
            y: Vec<f64>,
        }
        let s = to_json(&S { x: f64::NAN, y: vec![1.0, f64::INFINITY] }).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert!(v["x"].is_null());
        assert!(v["y"][1].is_null());
        assert_eq!(v["y"][0], 1.0);
    }
}
