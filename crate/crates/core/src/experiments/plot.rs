//! Minimal deterministic SVG log-log plots.

use std::fmt::Write;
use std::path::Path;

use super::ExperimentError;
use crate::metrics::{Quantity, RatePrediction, TrajectorySample};

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 320.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 14.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 40.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

/// A polyline over positive `(t, y)` points, optionally with a `t^{-β}` guide.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotCurve {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub guide_exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotPanel {
    pub title: String,
    pub curves: Vec<PlotCurve>,
}

impl PlotCurve {
    fn positive(label: String, raw: impl Iterator<Item = (f64, Option<f64>)>, guide: Option<f64>) -> Option<Self> {
        let points: Vec<(f64, f64)> = raw
            .filter_map(|(t, v)| v.filter(|v| *v > 0.0 && v.is_finite() && t > 0.0).map(|v| (t, v)))
            .collect();
        (points.len() >= 2).then_some(Self {
            label,
            points,
            guide_exponent: guide,
        })
    }
}

fn decade_range(lo: f64, hi: f64) -> (f64, f64) {
    let (a, b) = (lo.log10().floor(), hi.log10().ceil());
    if a == b {
        (a - 1.0, b + 1.0)
    } else {
        (a, b)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders panels side by side. Curves need at least two positive points.
pub fn render_panels(panels: &[PlotPanel]) -> Result<String, ExperimentError> {
    let panels: Vec<&PlotPanel> = panels.iter().filter(|p| !p.curves.is_empty()).collect();
    if panels.is_empty() {
        return Err(ExperimentError::NothingToPlot);
    }
    let width = PANEL_W * panels.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" viewBox="0 0 {width} {PANEL_H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{PANEL_H}" fill="white"/>"#);
    for (k, panel) in panels.iter().enumerate() {
        render_panel(&mut svg, panel, k as f64 * PANEL_W);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn render_panel(svg: &mut String, panel: &PlotPanel, x_off: f64) {
    let all = panel.curves.iter().flat_map(|c| c.points.iter());
    let (mut tmin, mut tmax, mut ymin, mut ymax) = (f64::INFINITY, 0.0f64, f64::INFINITY, 0.0f64);
    for &(t, y) in all {
        tmin = tmin.min(t);
        tmax = tmax.max(t);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    let (tx0, tx1) = decade_range(tmin, tmax);
    let (ty0, ty1) = decade_range(ymin, ymax);
    let left = x_off + MARGIN_L;
    let right = x_off + PANEL_W - MARGIN_R;
    let top = MARGIN_T;
    let bottom = PANEL_H - MARGIN_B;
    let px = move |t: f64| left + (t.log10() - tx0) / (tx1 - tx0) * (right - left);
    let py = move |y: f64| bottom - (y.log10() - ty0) / (ty1 - ty0) * (bottom - top);

    let _ = writeln!(svg, r#"<g>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        (left + right) / 2.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        right - left,
        bottom - top
    );
    for d in tx0 as i64..=tx1 as i64 {
        let x = px(10f64.powi(d as i32));
        let _ = writeln!(svg, r##"<line x1="{x}" y1="{top}" x2="{x}" y2="{bottom}" stroke="#ddd"/>"##);
        let _ = writeln!(svg, r#"<text x="{x}" y="{}" text-anchor="middle">1e{d}</text>"#, bottom + 14.0);
    }
    for d in ty0 as i64..=ty1 as i64 {
        let y = py(10f64.powi(d as i32));
        let _ = writeln!(svg, r##"<line x1="{left}" y1="{y}" x2="{right}" y2="{y}" stroke="#ddd"/>"##);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">1e{d}</text>"#, left - 4.0, y + 4.0);
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">t</text>"#,
        (left + right) / 2.0,
        PANEL_H - 8.0
    );

    for (i, curve) in panel.curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = curve.points.iter().map(|&(t, y)| format!("{},{}", px(t), py(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="data" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        if let Some(beta) = curve.guide_exponent {
            // Guide t^{-β} through the curve's first point, clipped to the panel.
            let (t0, y0) = curve.points[0];
            let t1 = curve.points.last().expect("two points").0;
            let y1 = y0 * (t1 / t0).powf(-beta);
            if y1 > 0.0 && y1.is_finite() {
                let _ = writeln!(
                    svg,
                    r#"<line class="guide" x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-dasharray="4 3" opacity="0.6"/>"#,
                    px(t0),
                    py(y0).clamp(top, bottom),
                    px(t1),
                    py(y1).clamp(top, bottom)
                );
            }
        }
        let ly = top + 14.0 + 14.0 * i as f64;
        let label = match curve.guide_exponent {
            Some(b) => format!("{} (guide t^-{b})", curve.label),
            None => curve.label.clone(),
        };
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            right - 150.0,
            ly - 4.0,
            right - 132.0,
            ly - 4.0,
            right - 128.0,
            ly,
            escape(&label)
        );
    }
    let _ = writeln!(svg, "</g>");
}

/// One panel, one polyline per quantity, guides from `prediction`.
pub fn emit_plot(
    samples: &[TrajectorySample],
    quantities: &[Quantity],
    prediction: Option<&RatePrediction>,
    path: &Path,
) -> Result<(), ExperimentError> {
    let curves: Vec<PlotCurve> = quantities
        .iter()
        .filter_map(|q| {
            PlotCurve::positive(
                q.name().to_string(),
                samples.iter().map(|s| (s.t, q.value(s))),
                prediction.and_then(|p| p.get(*q)),
            )
        })
        .collect();
    let title = quantities.iter().map(|q| q.name()).collect::<Vec<_>>().join(", ");
    let svg = render_panels(&[PlotPanel { title, curves }])?;
    std::fs::write(path, svg).map_err(|e| ExperimentError::io(path, e))
}

/// One panel per quantity, one curve per labelled run.
pub fn emit_comparison_plot(
    runs: &[(String, &[TrajectorySample])],
    quantities: &[Quantity],
    path: &Path,
) -> Result<(), ExperimentError> {
    let panels: Vec<PlotPanel> = quantities
        .iter()
        .map(|q| PlotPanel {
            title: q.name().to_string(),
            curves: runs
                .iter()
                .filter_map(|(label, samples)| {
                    PlotCurve::positive(label.clone(), samples.iter().map(|s| (s.t, q.value(s))), None)
                })
                .collect(),
        })
        .collect();
    let svg = render_panels(&panels)?;
    std::fs::write(path, svg).map_err(|e| ExperimentError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::make_log_grid;

    fn polylines(svg: &str) -> Vec<Vec<(f64, f64)>> {
        svg.lines()
            .filter(|l| l.contains(r#"class="data""#))
            .map(|l| {
                let pts = l.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
                pts.split(' ')
                    .map(|p| {
                        let (x, y) = p.split_once(',').unwrap();
                        (x.parse().unwrap(), y.parse().unwrap())
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn power_law_is_a_straight_polyline() {
        let t = make_log_grid(1.0, 1e4, 200).unwrap();
        let samples: Vec<TrajectorySample> = t
            .iter()
            .map(|&t| TrajectorySample {
                t,
                feasibility: 1.0 / t,
                ..Default::default()
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.svg");
        emit_plot(&samples, &[Quantity::Feasibility], None, &path).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        let line = &polylines(&svg)[0];
        assert_eq!(line.len(), 200);
        // Least-squares line through the pixel points; the pixel map is affine in log space.
        let n = line.len() as f64;
        let mx = line.iter().map(|p| p.0).sum::<f64>() / n;
        let my = line.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = line.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = line.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        let dev = line.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).abs()).fold(0.0, f64::max);
        assert!(dev <= 1e-9, "max deviation {dev}");
        // Four decades on both axes and equal pixel spans: slope -1 in log space.
        let x_span = PANEL_W - MARGIN_L - MARGIN_R;
        let y_span = PANEL_H - MARGIN_T - MARGIN_B;
        assert!((slope * x_span / y_span - 1.0).abs() < 1e-9, "{slope}");
    }

    #[test]
    fn nothing_to_plot() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.svg");
        assert!(matches!(emit_plot(&[], &[], None, &path), Err(ExperimentError::NothingToPlot)));
        let samples = vec![TrajectorySample { t: 1.0, ..Default::default() }; 3];
        assert!(matches!(
            emit_plot(&samples, &[Quantity::Energy], None, &path),
            Err(ExperimentError::NothingToPlot)
        ));
    }

    #[test]
    fn comparison_has_one_panel_per_quantity() {
        let t = make_log_grid(1.0, 100.0, 20).unwrap();
        let mk = |k: f64| -> Vec<TrajectorySample> {
            t.iter()
                .map(|&t| TrajectorySample {
                    t,
                    feasibility: t.powf(-k),
                    obj_residual: Some(2.0 * t.powf(-k)),
                    dist_minnorm: Some(t.powf(-k / 2.0)),
                    ..Default::default()
                })
                .collect()
        };
        let runs: Vec<Vec<TrajectorySample>> = [0.2, 0.5, 0.7, 0.9].iter().map(|&k| mk(k)).collect();
        let labelled: Vec<(String, &[TrajectorySample])> =
            runs.iter().enumerate().map(|(i, r)| (format!("run {i}"), r.as_slice())).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.svg");
        emit_comparison_plot(
            &labelled,
            &[Quantity::DistMinnorm, Quantity::ObjResidual, Quantity::Feasibility],
            &path,
        )
        .unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        assert_eq!(svg.matches("<g>").count(), 3);
        assert_eq!(polylines(&svg).len(), 12);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
