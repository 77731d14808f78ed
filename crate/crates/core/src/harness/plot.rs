//! Standalone SVG of success rate against environment steps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};

use super::artifacts::read_rows;

/// Accepts training logs (`sr`) and ablation curves (`sr_mean`).
#[derive(Debug, Deserialize)]
struct Point {
    step: f64,
    #[serde(alias = "sr_mean")]
    sr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSummary {
    /// Vertex count of each polyline, in input order.
    pub vertices: Vec<usize>,
    /// Malformed rows skipped across all logs.
    pub skipped: usize,
}

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders one polyline per series on shared axes; SR spans `[0, 1]`.
pub fn render_svg(series: &[Series]) -> String {
    let max_step = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .fold(0.0f64, f64::max)
        .max(1.0);
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let x = |s: f64| LEFT + pw * s / max_step;
    let y = |v: f64| TOP + ph * (1.0 - v.clamp(0.0, 1.0));
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<g class="axes" stroke="black"><line x1="{LEFT}" y1="{}" x2="{}" y2="{}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}"/></g>"#,
        TOP + ph,
        LEFT + pw,
        TOP + ph,
        TOP + ph
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.1}</text>"#,
            LEFT - 6.0,
            y(v) + 4.0
        );
        let s = max_step * v;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x(s),
            TOP + ph + 18.0,
            s.round() as u64
        );
    }
    let _ = writeln!(
        svg,
        r#"<text class="xlabel" x="{:.1}" y="{}" text-anchor="middle">environment steps</text>"#,
        LEFT + pw / 2.0,
        H - 16.0
    );
    let _ = writeln!(
        svg,
        r#"<text class="ylabel" transform="translate(18 {:.1}) rotate(-90)" text-anchor="middle">success rate</text>"#,
        TOP + ph / 2.0
    );
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(st, v)| format!("{:.2},{:.2}", x(st), y(v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 16.0 * i as f64 + 8.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            W - RIGHT + 12.0,
            W - RIGHT + 32.0,
            W - RIGHT + 38.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn plot_cmd(logs: &[PathBuf], out: &Path) -> Result<PlotSummary> {
    if logs.is_empty() {
        return Err(Error::Config("plot needs at least one log".into()));
    }
    let mut series = Vec::with_capacity(logs.len());
    let mut skipped = 0;
    for path in logs {
        let (rows, bad): (Vec<Point>, usize) = read_rows(path)?;
        skipped += bad;
        series.push(Series {
            label: path.display().to_string(),
            points: rows.iter().map(|p| (p.step, p.sr)).collect(),
        });
    }
    if skipped > 0 {
        log::warn!("plot: skipped {skipped} malformed rows");
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(out, render_svg(&series)).map_err(|e| Error::io(out, e))?;
    Ok(PlotSummary {
        vertices: series.iter().map(|s| s.points.len()).collect(),
        skipped,
    })
}
