//! CSV, JSON and SVG renderings of reports, ROC curves and IP projections.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EvalError, MetricsReport, RocCurve, OVERALL};
use crate::encoder::Label;
use crate::ipdetector::ProjectedIp;

/// A model's pooled ROC under one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedCurve {
    pub model: String,
    pub seed: u64,
    pub auc: f64,
    pub curve: RocCurve,
}

fn csv_string(rows: Vec<Vec<String>>) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

fn fmt_metric(v: f64) -> String {
    format!("{v:.6}")
}

fn set_order(report: &MetricsReport) -> Vec<&str> {
    report.testsets.iter().map(String::as_str).chain([OVERALL]).collect()
}

/// Long format: `testset,model,accuracy,auc`, values averaged over seeds,
/// with the pooled rows last. A missing AUC is left empty.
pub fn report_csv(report: &MetricsReport) -> Result<String, EvalError> {
    let mut rows = vec![vec!["testset".into(), "model".into(), "accuracy".into(), "auc".into()]];
    for set in set_order(report) {
        for model in &report.models {
            if let Some((acc, auc)) = report.mean(set, model) {
                rows.push(vec![
                    set.into(),
                    model.clone(),
                    fmt_metric(acc),
                    auc.map(fmt_metric).unwrap_or_default(),
                ]);
            }
        }
    }
    csv_string(rows)
}

/// Wide format: one row per model, one accuracy column per test set and a
/// final pooled column.
pub fn report_table_csv(report: &MetricsReport) -> Result<String, EvalError> {
    let sets = set_order(report);
    let mut rows = vec![std::iter::once("model")
        .chain(sets.iter().copied())
        .map(String::from)
        .collect()];
    for model in &report.models {
        let mut row = vec![model.clone()];
        for set in &sets {
            row.push(report.mean(set, model).map(|(a, _)| fmt_metric(a)).unwrap_or_default());
        }
        rows.push(row);
    }
    csv_string(rows)
}

pub fn report_json(report: &MetricsReport) -> Result<String, EvalError> {
    Ok(serde_json::to_string_pretty(report)?)
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"];
const SUSPECTED_COLOR: &str = "#d62728";
const NORMAL_COLOR: &str = "#2ca02c";

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">
<title>{}</title>
<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#,
        escape(title)
    );
}

/// Drops interior points that lie on the segment joining their neighbours.
fn simplify(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for &p in points {
        if out.last() == Some(&p) {
            continue;
        }
        if out.len() >= 2 {
            let (a, b) = (out[out.len() - 2], out[out.len() - 1]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross == 0.0 {
                out.pop();
            }
        }
        out.push(p);
    }
    out
}

/// ROC curves on the unit square. Polylines are drawn in data coordinates
/// inside a scaling group, so a perfect classifier reads `0,0 0,1 1,1`.
pub fn roc_svg(curves: &[NamedCurve]) -> Result<String, EvalError> {
    if curves.is_empty() {
        return Err(EvalError::NothingToPlot);
    }
    let (ox, oy, side) = (70.0, 420.0, 360.0);
    let mut s = String::new();
    svg_open(&mut s, "ROC curves");
    let _ = writeln!(
        s,
        r##"<g id="axes" stroke="black" stroke-width="1">
<line x1="{ox}" y1="{oy}" x2="{}" y2="{oy}"/>
<line x1="{ox}" y1="{oy}" x2="{ox}" y2="{}"/>
</g>"##,
        ox + side,
        oy - side
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let (x, y) = (ox + tick * side, oy - tick * side);
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle">{tick}</text><text x="{}" y="{}" text-anchor="end">{tick}</text>"#,
            oy + 16.0,
            ox - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">False positive rate</text>
<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">True positive rate</text>"#,
        ox + side / 2.0,
        oy + 40.0,
        oy - side / 2.0,
        oy - side / 2.0
    );
    let stroke = 2.0 / side;
    let _ = writeln!(
        s,
        r#"<g id="curves" transform="translate({ox},{oy}) scale({side},-{side})" fill="none">"#
    );
    let _ = writeln!(
        s,
        r##"<polyline points="0,0 1,1" stroke="#bbbbbb" stroke-width="{stroke}" stroke-dasharray="{} {}"/>"##,
        4.0 / side,
        4.0 / side
    );
    for (i, c) in curves.iter().enumerate() {
        let pts: Vec<String> = simplify(&c.curve.points)
            .iter()
            .map(|(x, y)| format!("{x},{y}"))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="{}" stroke-width="{stroke}"><title>{}</title></polyline>"#,
            pts.join(" "),
            PALETTE[i % PALETTE.len()],
            escape(&c.model)
        );
    }
    s.push_str("</g>\n");
    let single_seed = curves.iter().all(|c| c.seed == curves[0].seed);
    let _ = writeln!(s, r#"<g id="legend">"#);
    for (i, c) in curves.iter().enumerate() {
        let y = 80.0 + 20.0 * i as f64;
        let label = if single_seed {
            format!("{} (AUC {:.4})", c.model, c.auc)
        } else {
            format!("{} seed {} (AUC {:.4})", c.model, c.seed, c.auc)
        };
        let _ = writeln!(
            s,
            r#"<line x1="450" y1="{y}" x2="470" y2="{y}" stroke="{}" stroke-width="2"/><text x="476" y="{}">{}</text>"#,
            PALETTE[i % PALETTE.len()],
            y + 4.0,
            escape(&label)
        );
    }
    s.push_str("</g>\n</svg>\n");
    Ok(s)
}

/// Scatter of projected addresses, one circle each, coloured by class.
pub fn pca_svg(points: &[ProjectedIp]) -> Result<String, EvalError> {
    if points.is_empty() {
        return Err(EvalError::NothingToPlot);
    }
    let (left, right, top, bottom) = (70.0, 520.0, 40.0, 420.0);
    let bounds = |f: fn(&ProjectedIp) -> f64| {
        let lo = points.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 1e-12 {
            (lo - 1.0, hi + 1.0)
        } else {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        }
    };
    let (x0, x1) = bounds(|p| p.x);
    let (y0, y1) = bounds(|p| p.y);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (right - left);
    let py = |y: f64| bottom - (y - y0) / (y1 - y0) * (bottom - top);

    let mut s = String::new();
    svg_open(&mut s, "IP address projection");
    let _ = writeln!(
        s,
        r#"<g id="axes" stroke="black" stroke-width="1">
<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}"/>
<line x1="{left}" y1="{bottom}" x2="{left}" y2="{top}"/>
</g>
<text x="{}" y="{}" text-anchor="middle">PC1</text>
<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">PC2</text>"#,
        (left + right) / 2.0,
        bottom + 36.0,
        (top + bottom) / 2.0,
        (top + bottom) / 2.0
    );
    let _ = writeln!(s, r#"<g id="points">"#);
    for p in points {
        let color = match p.label {
            Label::Suspected => SUSPECTED_COLOR,
            Label::Normal => NORMAL_COLOR,
        };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.3}" cy="{:.3}" r="5" fill="{color}" fill-opacity="0.8" class="{}"><title>{}</title></circle>"#,
            px(p.x),
            py(p.y),
            p.label,
            p.ip
        );
    }
    s.push_str("</g>\n");
    let _ = writeln!(
        s,
        r#"<g id="legend">
<circle cx="545" cy="60" r="5" fill="{NORMAL_COLOR}"/><text x="556" y="64">normal</text>
<circle cx="545" cy="80" r="5" fill="{SUSPECTED_COLOR}"/><text x="556" y="84">suspected</text>
</g>
</svg>"#
    );
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points_collapse() {
        let pts = [(0.0, 0.0), (0.0, 0.5), (0.0, 1.0), (0.5, 1.0), (1.0, 1.0)];
        assert_eq!(simplify(&pts), vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(simplify(&[(0.0, 0.0), (1.0, 1.0)]), vec![(0.0, 0.0), (1.0, 1.0)]);
    }
}
