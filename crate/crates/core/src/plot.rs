//! Deterministic SVG rendering: fixed canvas, fixed number formatting, no
//! timestamps, so identical inputs give byte-identical files.

use std::fmt::Write;
use std::str::FromStr;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::grid::ScalarField;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;
const TICKS: usize = 5;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// One polyline.
#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

/// A 2D line chart with an optional horizontal reference rule.
#[derive(Clone, Debug, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub rule: Option<(f64, String)>,
    /// Plot `log10 x` instead of `x`.
    pub log_x: bool,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(hi > lo) {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        (lo - pad, hi + pad)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open_svg(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str, log_x: bool) {
    let (l, r, t, b) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        out,
        r#"<rect x="{l:.1}" y="{t:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        r - l,
        b - t
    );
    for i in 0..TICKS {
        let s = i as f64 / (TICKS - 1) as f64;
        let xv = f.x0 + s * (f.x1 - f.x0);
        let yv = f.y0 + s * (f.y1 - f.y0);
        let (px, py) = (f.px(xv), f.py(yv));
        let xt = if log_x { format!("{:.3e}", 10f64.powf(xv)) } else { format!("{xv:.4}") };
        let _ = writeln!(out, r#"<line x1="{px:.1}" y1="{b:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/>"#, b + 4.0);
        let _ = writeln!(out, r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{xt}</text>"#, b + 16.0);
        let _ = writeln!(out, r#"<line x1="{:.1}" y1="{py:.1}" x2="{l:.1}" y2="{py:.1}" stroke="black"/>"#, l - 4.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.4}</text>"#, l - 6.0, py + 4.0);
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (l + r) / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(y_label)
    );
}

/// Renders a [`LinePlot`].
pub fn line_plot_svg(plot: &LinePlot) -> Result<String> {
    let tx = |x: f64| if plot.log_x { x.log10() } else { x };
    let points: Vec<(f64, f64)> = plot
        .series
        .iter()
        .flat_map(|s| s.xs.iter().zip(&s.ys).map(|(&x, &y)| (tx(x), y)))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    if points.is_empty() {
        return Err(Error::InvalidInput("nothing to plot".into()));
    }
    let fold = |g: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| points.iter().map(pick).fold(init, g);
    let (x0, x1) = padded(fold(f64::min, f64::INFINITY, |p| p.0), fold(f64::max, f64::NEG_INFINITY, |p| p.0));
    let mut ylo = fold(f64::min, f64::INFINITY, |p| p.1);
    let mut yhi = fold(f64::max, f64::NEG_INFINITY, |p| p.1);
    if let Some((r, _)) = plot.rule.as_ref().filter(|(r, _)| r.is_finite()) {
        ylo = ylo.min(*r);
        yhi = yhi.max(*r);
    }
    let (y0, y1) = padded(ylo, yhi);
    let frame = Frame { x0, x1, y0, y1 };

    let mut out = String::new();
    open_svg(&mut out, &plot.title);
    axes(&mut out, &frame, &plot.x_label, &plot.y_label, plot.log_x);
    if let Some((r, label)) = plot.rule.as_ref().filter(|(r, _)| r.is_finite()) {
        let py = frame.py(*r);
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT:.1}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#555555" stroke-dasharray="6 4"/>"##,
            WIDTH - RIGHT
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="end" fill="#555555">{}</text>"##,
            WIDTH - RIGHT - 4.0,
            py - 4.0,
            escape(label)
        );
    }
    for (k, s) in plot.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s
            .xs
            .iter()
            .zip(&s.ys)
            .map(|(&x, &y)| (tx(x), y))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
            LEFT + 8.0,
            TOP + 16.0 * (k + 1) as f64,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn color_ramp(s: f64) -> String {
    // blue -> white -> red
    let s = s.clamp(0.0, 1.0);
    let (r, g, b) = if s < 0.5 {
        let t = s / 0.5;
        (t, t, 1.0)
    } else {
        let t = (s - 0.5) / 0.5;
        (1.0, 1.0 - t, 1.0 - t)
    };
    format!("#{:02x}{:02x}{:02x}", (255.0 * r) as u8, (255.0 * g) as u8, (255.0 * b) as u8)
}

/// `N = 1`: one polyline through the `M` node values. `N = 2`: raster.
pub fn field_svg(field: &ScalarField, title: &str) -> Result<String> {
    let grid = field.grid();
    match grid.dim() {
        1 => {
            let xs: Vec<f64> = (0..grid.len()).map(|i| grid.point(i)[0]).collect();
            line_plot_svg(&LinePlot {
                title: title.into(),
                x_label: "x".into(),
                y_label: "value".into(),
                series: vec![Series {
                    label: title.into(),
                    xs,
                    ys: field.values().to_vec(),
                }],
                ..Default::default()
            })
        }
        2 => {
            let m = grid.points_per_axis();
            let (lo, hi) = (field.min(), field.max());
            let span = if hi > lo { hi - lo } else { 1.0 };
            let size = (HEIGHT - TOP - BOTTOM).min(WIDTH - LEFT - RIGHT);
            let cell = size / m as f64;
            let mut out = String::new();
            open_svg(&mut out, title);
            for flat in 0..grid.len() {
                let idx = grid.multi_index(flat);
                let color = color_ramp((field.values()[flat] - lo) / span);
                // first axis to the right, second axis up
                let x = LEFT + idx[0] as f64 * cell;
                let y = TOP + (m - 1 - idx[1]) as f64 * cell;
                let _ = writeln!(
                    out,
                    r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
                    cell + 0.01,
                    cell + 0.01
                );
            }
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}">min {lo:.4e}, max {hi:.4e}</text>"#,
                LEFT + size + 12.0,
                TOP + 12.0
            );
            out.push_str("</svg>\n");
            Ok(out)
        }
        n => Err(Error::InvalidInput(format!("no field rendering for N = {n}"))),
    }
}

/// Report kinds understood by [`emit_plot`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// Scaled log-mass vs ε with the bound as a horizontal rule.
    Ldp,
    /// `λ/h` vs ε with the extrapolated limit as a rule.
    Continuation,
    /// A serialized scalar field.
    Field,
}

impl FromStr for PlotKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ldp" => Ok(Self::Ldp),
            "continuation" => Ok(Self::Continuation),
            "field" => Ok(Self::Field),
            other => Err(Error::UnknownReportKind(other.into())),
        }
    }
}

#[derive(Deserialize)]
struct LdpView {
    schedule: Vec<(f64, f64)>,
    scaled_log_masses: Vec<f64>,
    bound: f64,
    regime: String,
}

#[derive(Deserialize)]
struct ContinuationView {
    schedule: Vec<(f64, f64)>,
    effective_h: Vec<f64>,
    limit: f64,
}

/// Renders a report previously written as JSON.
pub fn emit_plot(report: &serde_json::Value, kind: &str) -> Result<String> {
    match kind.parse::<PlotKind>()? {
        PlotKind::Ldp => {
            let r: LdpView = serde_json::from_value(report.clone())?;
            let xs: Vec<f64> = r.schedule.iter().map(|p| p.0).collect();
            // dropped points are not in scaled_log_masses; align from the front
            let xs = xs[..r.scaled_log_masses.len().min(xs.len())].to_vec();
            line_plot_svg(&LinePlot {
                title: format!("scaled log-mass ({})", r.regime),
                x_label: "epsilon".into(),
                y_label: "scaled log mass".into(),
                series: vec![Series {
                    label: "scaled log mass".into(),
                    xs,
                    ys: r.scaled_log_masses,
                }],
                rule: Some((r.bound, format!("bound {:.4}", r.bound))),
                log_x: true,
            })
        }
        PlotKind::Continuation => {
            let r: ContinuationView = serde_json::from_value(report.clone())?;
            line_plot_svg(&LinePlot {
                title: "effective Hamiltonian along the schedule".into(),
                x_label: "epsilon".into(),
                y_label: "lambda / h".into(),
                series: vec![Series {
                    label: "lambda / h".into(),
                    xs: r.schedule.iter().map(|p| p.0).collect(),
                    ys: r.effective_h,
                }],
                rule: Some((r.limit, format!("limit {:.6}", r.limit))),
                log_x: true,
            })
        }
        PlotKind::Field => {
            let field: ScalarField = serde_json::from_value(report.clone())?;
            field_svg(&field, "field")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;

    #[test]
    fn one_dimensional_field_is_one_polyline() {
        let grid = TorusGrid::new(1, 16).unwrap();
        let f = ScalarField::from_fn(grid, |x| x[0] * x[0]);
        let svg = field_svg(&f, "f").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(pts.split(' ').count(), 16);
        assert_eq!(svg, field_svg(&f, "f").unwrap());
    }

    #[test]
    fn ldp_plot_draws_the_bound() {
        let report = serde_json::json!({
            "regime": "fixed-h",
            "schedule": [[0.1, 0.2], [0.05, 0.2]],
            "scaled_log_masses": [-0.2, -0.15],
            "bound": -0.125,
        });
        let svg = emit_plot(&report, "ldp").unwrap();
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.contains("bound -0.1250"));
    }

    #[test]
    fn unknown_kind() {
        let e = emit_plot(&serde_json::json!({}), "histogram").unwrap_err();
        assert!(matches!(e, Error::UnknownReportKind(k) if k == "histogram"));
    }

    #[test]
    fn raster_for_two_dimensions() {
        let grid = TorusGrid::new(2, 4).unwrap();
        let f = ScalarField::from_fn(grid, |x| x[0] + x[1]);
        let svg = field_svg(&f, "g").unwrap();
        assert_eq!(svg.matches("<rect").count(), 1 + 16);
    }
}
