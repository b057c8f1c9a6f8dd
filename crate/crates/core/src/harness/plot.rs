use std::fmt::Write as _;
use std::path::Path;

use super::RegretSeries;
use crate::error::{Error, Result};

pub const MAX_PLOT_POINTS: usize = 2000;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 170.0;
const MARGIN_Y: f64 = 40.0;
const COLORS: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// At most `max` evenly spaced indices into `0..len`, always keeping both ends.
pub fn downsample_indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max || max < 2 {
        return (0..len).collect();
    }
    let span = (len - 1) as f64 / (max - 1) as f64;
    let mut out: Vec<usize> = (0..max).map(|k| (k as f64 * span).round() as usize).collect();
    out[max - 1] = len - 1;
    out.dedup();
    out
}

/// Standalone SVG of mean cumulative regret against time, with a ±1 standard
/// error band per series.
pub fn render_svg(series: &[RegretSeries], labels: &[String]) -> Result<String> {
    let Some(first) = series.first() else {
        return Err(Error::Contract("nothing to plot".into()));
    };
    if labels.len() != series.len() {
        return Err(Error::Contract(format!("{} series but {} labels", series.len(), labels.len())));
    }
    let horizon = first.horizon();
    if let Some(bad) = series.iter().find(|s| s.horizon() != horizon) {
        return Err(Error::Contract(format!("horizon mismatch: {horizon} vs {}", bad.horizon())));
    }
    if horizon == 0 {
        return Err(Error::Contract("empty series".into()));
    }

    let mut lo: f64 = 0.0;
    let mut hi: f64 = 0.0;
    for s in series {
        for (m, e) in s.mean.iter().zip(&s.stderr) {
            lo = lo.min(m - e);
            hi = hi.max(m + e);
        }
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - 2.0 * MARGIN_Y;
    let x_of = |i: usize| MARGIN_LEFT + if horizon > 1 { i as f64 / (horizon - 1) as f64 } else { 0.0 } * plot_w;
    let y_of = |v: f64| MARGIN_Y + (hi - v) / (hi - lo) * plot_h;
    let idx = downsample_indices(horizon, MAX_PLOT_POINTS);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, x1, y0, y1) = (MARGIN_LEFT, MARGIN_LEFT + plot_w, MARGIN_Y, MARGIN_Y + plot_h);
    let _ = writeln!(
        svg,
        r#"<path class="axes" d="M{x0} {y0} L{x0} {y1} L{x1} {y1}" stroke="black" fill="none"/>"#
    );
    let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12">time step</text>"#, (x0 + x1) / 2.0, HEIGHT - 8.0);
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.1}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {:.1})">mean cumulative regret</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    for (v, y) in [(lo, y1), (hi, y0)] {
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="11">{}</text>"#, x0 - 4.0, y + 4.0, tick(v));
    }
    let _ = writeln!(svg, r#"<text x="{x1}" y="{:.1}" text-anchor="end" font-size="11">{horizon}</text>"#, y1 + 14.0);

    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut band = String::new();
        for &i in &idx {
            let _ = write!(band, "{:.2},{:.2} ", x_of(i), y_of(s.mean[i] + s.stderr[i]));
        }
        for &i in idx.iter().rev() {
            let _ = write!(band, "{:.2},{:.2} ", x_of(i), y_of(s.mean[i] - s.stderr[i]));
        }
        let _ = writeln!(svg, r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band.trim_end());
        let mut line = String::new();
        for &i in &idx {
            let _ = write!(line, "{:.2},{:.2} ", x_of(i), y_of(s.mean[i]));
        }
        let _ = writeln!(svg, r#"<polyline class="series" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.trim_end());
    }
    for (k, label) in labels.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let y = MARGIN_Y + 10.0 + 20.0 * k as f64;
        let x = x1 + 15.0;
        let _ = writeln!(
            svg,
            r#"<g class="legend"><rect x="{x}" y="{:.1}" width="14" height="4" fill="{color}"/><text x="{:.1}" y="{:.1}" font-size="12">{}</text></g>"#,
            y - 2.0,
            x + 20.0,
            y + 4.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_plot(series: &[RegretSeries], labels: &[String], path: &Path) -> Result<()> {
    let svg = render_svg(series, labels)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
