//! Minimal SVG line charts for training curves — no plotting dependency,
//! just deterministic string assembly.
//!
//! Two entry points: [`line_chart`] renders one titled panel with axes,
//! gridlines, tick labels, and a legend; [`four_panel`] arranges the four
//! standard training diagnostics (reward accuracy, entropy, mean response
//! length, clip fraction) in a 2×2 grid sharing one legend. Output is a
//! complete standalone SVG document.
//!
//! Rendering is deterministic: the same series produce byte-identical SVG,
//! so report files can be diffed across runs. Coordinates are written with
//! two decimal places; colors come from a fixed eight-color palette keyed by
//! series order.

use std::fmt::Write as _;

use crate::metrics::TrainMetrics;

/// Fixed palette; series beyond eight cycle.
pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

const PANEL_WIDTH: f64 = 460.0;
const PANEL_HEIGHT: f64 = 320.0;
const MARGIN_LEFT: f64 = 58.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 34.0;
const MARGIN_BOTTOM: f64 = 42.0;
const TICKS: usize = 5;

/// One named curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// (x, y) pairs; non-finite points are skipped.
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
        }
    }

    /// Builds a series from a metrics stream with an offset added to each
    /// step, so consecutive stages concatenate on one x axis.
    pub fn from_metrics(
        label: impl Into<String>,
        metrics: &[TrainMetrics],
        step_offset: usize,
        y: impl Fn(&TrainMetrics) -> f64,
    ) -> Self {
        Self {
            label: label.into(),
            points: metrics
                .iter()
                .map(|m| ((m.step + step_offset) as f64, y(m)))
                .collect(),
        }
    }
}

/// Escapes text for SVG/XML content and attribute positions.
fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            other => out.push(other),
        }
    }
    out
}

/// Nice-number tick label: trims trailing zeros from a fixed formatting.
fn tick_label(value: f64) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    let magnitude = value.abs();
    let text = if magnitude >= 1000.0 {
        format!("{value:.0}")
    } else if magnitude >= 1.0 {
        format!("{value:.2}")
    } else {
        format!("{value:.3}")
    };
    if text.contains('.') {
        text.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        text
    }
}

fn finite_points(series: &[Series]) -> Vec<(f64, f64)> {
    series
        .iter()
        .flat_map(|s| s.points.iter())
        .copied()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect()
}

/// Data ranges padded so flat lines do not collapse the axis.
fn ranges(points: &[(f64, f64)]) -> ((f64, f64), (f64, f64)) {
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for &(x, y) in points {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if points.is_empty() {
        return ((0.0, 1.0), (0.0, 1.0));
    }
    if x_min == x_max {
        x_min -= 0.5;
        x_max += 0.5;
    }
    if y_min == y_max {
        let pad = if y_min == 0.0 { 0.5 } else { y_min.abs() * 0.1 };
        y_min -= pad;
        y_max += pad;
    }
    ((x_min, x_max), (y_min, y_max))
}

/// Renders one panel's inner content (no `<svg>` wrapper) at origin 0,0.
fn panel_body(title: &str, series: &[Series], with_legend: bool) -> String {
    let points = finite_points(series);
    let ((x_min, x_max), (y_min, y_max)) = ranges(&points);
    let plot_w = PANEL_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = PANEL_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = move |x: f64| MARGIN_LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = move |y: f64| MARGIN_TOP + plot_h - (y - y_min) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r##"<text x="{:.2}" y="20" font-size="14" font-weight="bold" text-anchor="middle" fill="#333">{}</text>"##,
        PANEL_WIDTH / 2.0,
        escape(title)
    );

    // Grid and ticks.
    for i in 0..TICKS {
        let f = i as f64 / (TICKS - 1) as f64;
        let xv = x_min + f * (x_max - x_min);
        let yv = y_min + f * (y_max - y_min);
        let gx = sx(xv);
        let gy = sy(yv);
        let _ = writeln!(
            svg,
            r##"<line x1="{gx:.2}" y1="{:.2}" x2="{gx:.2}" y2="{:.2}" stroke="#ddd" stroke-width="1"/>"##,
            MARGIN_TOP,
            MARGIN_TOP + plot_h
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{gy:.2}" x2="{:.2}" y2="{gy:.2}" stroke="#ddd" stroke-width="1"/>"##,
            MARGIN_LEFT,
            MARGIN_LEFT + plot_w
        );
        let _ = writeln!(
            svg,
            r##"<text x="{gx:.2}" y="{:.2}" font-size="10" text-anchor="middle" fill="#555">{}</text>"##,
            MARGIN_TOP + plot_h + 16.0,
            tick_label(xv)
        );
        let _ = writeln!(
            svg,
            r##"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end" fill="#555">{}</text>"##,
            MARGIN_LEFT - 6.0,
            gy + 3.5,
            tick_label(yv)
        );
    }

    // Axes on top of the grid.
    let _ = writeln!(
        svg,
        r##"<rect x="{:.2}" y="{:.2}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="#333" stroke-width="1"/>"##,
        MARGIN_LEFT, MARGIN_TOP
    );

    // One polyline per non-empty series.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if coords.is_empty() {
            continue;
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            coords.join(" ")
        );
    }

    if with_legend {
        for (i, s) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let ly = MARGIN_TOP + 14.0 * i as f64 + 8.0;
            let lx = MARGIN_LEFT + 10.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
                lx + 18.0
            );
            let _ = writeln!(
                svg,
                r##"<text x="{:.2}" y="{:.2}" font-size="11" fill="#333">{}</text>"##,
                lx + 24.0,
                ly + 3.5,
                escape(&s.label)
            );
        }
    }
    svg
}

/// Renders a standalone single-panel line chart.
pub fn line_chart(title: &str, series: &[Series]) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_WIDTH}" height="{PANEL_HEIGHT}" viewBox="0 0 {PANEL_WIDTH} {PANEL_HEIGHT}">"#
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#fff"/>"##);
    svg.push_str(&panel_body(title, series, true));
    svg.push_str("</svg>\n");
    svg
}

/// Extractor mapping a metrics row to one panel's y value.
type PanelMetric = fn(&TrainMetrics) -> f64;

/// The four standard diagnostics for a set of labeled metric streams, as a
/// 2×2 grid. Each entry in `runs` is one legend line across all panels.
pub fn four_panel(runs: &[(String, Vec<TrainMetrics>)]) -> String {
    let panels: [(&str, PanelMetric); 4] = [
        ("Reward accuracy", |m| m.reward_accuracy),
        ("Entropy", |m| m.entropy),
        ("Mean response length", |m| m.mean_response_length),
        ("Clip fraction", |m| m.clip_fraction),
    ];
    let width = PANEL_WIDTH * 2.0;
    let height = PANEL_HEIGHT * 2.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#fff"/>"##);
    for (i, (title, metric)) in panels.iter().enumerate() {
        let tx = (i % 2) as f64 * PANEL_WIDTH;
        let ty = (i / 2) as f64 * PANEL_HEIGHT;
        let series: Vec<Series> = runs
            .iter()
            .map(|(label, metrics)| Series::from_metrics(label.clone(), metrics, 0, *metric))
            .collect();
        let _ = writeln!(svg, r#"<g transform="translate({tx:.2},{ty:.2})">"#);
        // The legend appears once, on the first panel.
        svg.push_str(&panel_body(title, &series, i == 0));
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    svg
}
