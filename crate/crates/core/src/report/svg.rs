use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    Isoflop,
    CoPowerLaw,
    ResidualHist,
    Proportion,
    Crossover,
    Sensitivity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Style {
    pub color: String,
    pub dashed: bool,
    /// Draw a dot at each point in addition to the line.
    pub points: bool,
}

impl Style {
    pub fn line(color: &str) -> Self {
        Style { color: color.into(), dashed: false, points: false }
    }

    pub fn dashed(color: &str) -> Self {
        Style { color: color.into(), dashed: true, points: false }
    }

    pub fn with_points(mut self) -> Self {
        self.points = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerSet {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: String,
}

/// Everything needed to draw one chart. Coordinates are in data units; a
/// log10 axis takes raw positive values and transforms them itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub kind: PlotKind,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub x_scale: Scale,
    pub y_scale: Scale,
    pub markers: Vec<MarkerSet>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 78.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

/// Qualitative palette for series without a chosen colour.
pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn transform(v: f64, scale: Scale) -> f64 {
    match scale {
        Scale::Linear => v,
        Scale::Log10 => v.log10(),
    }
}

fn validate(spec: &PlotSpec) -> Result<()> {
    if spec.series.is_empty() {
        return Err(Error::invalid(format!("plot '{}' has no series", spec.title)));
    }
    let all = spec
        .series
        .iter()
        .map(|s| (&s.label, &s.points, "series"))
        .chain(spec.markers.iter().map(|m| (&m.label, &m.points, "markers")));
    for (label, points, what) in all {
        if points.is_empty() {
            return Err(Error::invalid(format!("{what} '{label}' is empty")));
        }
        for (i, &(x, y)) in points.iter().enumerate() {
            if !(x.is_finite() && y.is_finite()) {
                return Err(Error::invalid(format!("{what} '{label}' point {i} is not finite")));
            }
            if (spec.x_scale == Scale::Log10 && x <= 0.0) || (spec.y_scale == Scale::Log10 && y <= 0.0) {
                return Err(Error::invalid(format!(
                    "{what} '{label}' point {i} is non-positive on a log axis"
                )));
            }
        }
    }
    Ok(())
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = hi - lo;
    if span <= 0.0 {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.05 };
        (lo - pad, hi + pad)
    } else {
        (lo - 0.05 * span, hi + 0.05 * span)
    }
}

/// Tick positions (in transformed units) with 1/2/5 steps.
fn ticks(lo: f64, hi: f64, scale: Scale) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 7.0)
        .unwrap_or(10.0 * mag);
    let step = if scale == Scale::Log10 && span >= 2.0 { step.max(1.0).round() } else { step };
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn tick_label(v: f64, scale: Scale) -> String {
    match scale {
        Scale::Log10 if (v - v.round()).abs() < 1e-9 => format!("1e{}", v.round() as i64),
        Scale::Log10 => {
            let raw = 10f64.powf(v);
            format!("{raw:.2e}")
        }
        Scale::Linear => {
            let s = format!("{v:.4}");
            let s = s.trim_end_matches('0').trim_end_matches('.');
            if s == "-0" { "0".into() } else { s.to_string() }
        }
    }
}

/// Renders a standalone SVG document. Output depends only on `spec`.
pub fn render_svg(spec: &PlotSpec) -> Result<String> {
    validate(spec)?;
    let xs = spec
        .series
        .iter()
        .flat_map(|s| s.points.iter())
        .chain(spec.markers.iter().flat_map(|m| m.points.iter()))
        .map(|p| transform(p.0, spec.x_scale));
    let (x0, x1) = padded_range(xs);
    let ys = spec
        .series
        .iter()
        .flat_map(|s| s.points.iter())
        .chain(spec.markers.iter().flat_map(|m| m.points.iter()))
        .map(|p| transform(p.1, spec.y_scale));
    let (y0, y1) = padded_range(ys);

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (transform(x, spec.x_scale) - x0) / (x1 - x0) * plot_w;
    let py = |y: f64| TOP + plot_h - (transform(y, spec.y_scale) - y0) / (y1 - y0) * plot_h;
    let tx = |t: f64| LEFT + (t - x0) / (x1 - x0) * plot_w;
    let ty = |t: f64| TOP + plot_h - (t - y0) / (y1 - y0) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.3}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(&spec.title)
    );

    let _ = writeln!(svg, r#"<g class="axes" stroke="black" fill="none">"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT:.3}" y="{TOP:.3}" width="{plot_w:.3}" height="{plot_h:.3}"/>"#
    );
    let _ = writeln!(svg, "</g>");

    let _ = writeln!(svg, r#"<g class="ticks" font-size="11">"#);
    for t in ticks(x0, x1, spec.x_scale) {
        let x = tx(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.3}" y1="{:.3}" x2="{x:.3}" y2="{:.3}" stroke="#dddddd"/>"##,
            TOP,
            TOP + plot_h
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x:.3}" y="{:.3}" text-anchor="middle">{}</text>"#,
            TOP + plot_h + 16.0,
            escape(&tick_label(t, spec.x_scale))
        );
    }
    for t in ticks(y0, y1, spec.y_scale) {
        let y = ty(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT:.3}" y1="{y:.3}" x2="{:.3}" y2="{y:.3}" stroke="#dddddd"/>"##,
            LEFT + plot_w
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y + 4.0,
            escape(&tick_label(t, spec.y_scale))
        );
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(
        svg,
        r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 14.0,
        escape(&spec.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.3}" text-anchor="middle" transform="rotate(-90 18 {:.3})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(&spec.y_label)
    );

    for s in &spec.series {
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.3},{:.3}", px(x), py(y))).collect();
        let dash = if s.style.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<polyline class="series" data-label="{}" points="{}" fill="none" stroke="{}" stroke-width="1.6"{dash}/>"#,
            escape(&s.label),
            pts.join(" "),
            escape(&s.style.color)
        );
        if s.style.points {
            let _ = writeln!(svg, r#"<g class="series-points" fill="{}">"#, escape(&s.style.color));
            for &(x, y) in &s.points {
                let _ = writeln!(svg, r#"<circle cx="{:.3}" cy="{:.3}" r="2.5"/>"#, px(x), py(y));
            }
            let _ = writeln!(svg, "</g>");
        }
    }
    for m in &spec.markers {
        let _ = writeln!(
            svg,
            r#"<g class="markers" data-label="{}" fill="{}" stroke="white">"#,
            escape(&m.label),
            escape(&m.color)
        );
        for &(x, y) in &m.points {
            let (cx, cy) = (px(x), py(y));
            let _ = writeln!(
                svg,
                r#"<path d="M {:.3} {:.3} L {:.3} {:.3} L {:.3} {:.3} L {:.3} {:.3} Z"/>"#,
                cx,
                cy - 5.0,
                cx + 5.0,
                cy,
                cx,
                cy + 5.0,
                cx - 5.0,
                cy
            );
        }
        let _ = writeln!(svg, "</g>");
    }

    let _ = writeln!(svg, r#"<g class="legend" font-size="11">"#);
    let lx = LEFT + plot_w + 12.0;
    let entries = spec
        .series
        .iter()
        .map(|s| (&s.label, &s.style.color))
        .chain(spec.markers.iter().map(|m| (&m.label, &m.color)));
    for (i, (label, color)) in entries.enumerate() {
        let y = TOP + 8.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx:.3}" y="{:.3}" width="10" height="10" fill="{}"/>"#,
            y - 8.0,
            escape(color)
        );
        let _ = writeln!(svg, r#"<text x="{:.3}" y="{y:.3}">{}</text>"#, lx + 14.0, escape(label));
    }
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    Ok(svg)
}
