//! Hand-rolled SVG charts with fixed formatting.
//!
//! Every coordinate prints through the same {:.2} path and every input is
//! sorted before layout, so a chart is a deterministic function of its data.
//! Three shapes cover the reports: density curves for similarity
//! distributions, per-condition line charts for metric families (the series
//! named "control" draws dashed), and grouped bars for per-class accuracy.

use std::collections::BTreeSet;

use super::report::{AccuracyRow, SimilarityRow};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 450.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 50.0;
const MARGIN_B: f64 = 60.0;

const PALETTE: [&str; 8] = [
    "#1f6fb2", "#d1495b", "#3a9b68", "#8d5fb0", "#c98a2b", "#4fb3c9", "#6b7f8c", "#b04a8d",
];

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn fx(v: f64) -> String {
    format!("{v:.2}")
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Frame {
        // degenerate ranges get a unit pad so layout never divides by zero
        let (x0, x1) = if x1 > x0 { (x0, x1) } else { (x0 - 0.5, x0 + 0.5) };
        let (y0, y1) = if y1 > y0 { (y0, y1) } else { (y0 - 0.5, y0 + 0.5) };
        Frame { x0, x1, y0, y1 }
    }
    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - MARGIN_L - MARGIN_R)
    }
    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn open(title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" ",
            "font-family=\"sans-serif\" font-size=\"12\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{tx}\" y=\"28\" font-size=\"16\" text-anchor=\"middle\">{t}</text>\n"
        ),
        w = fx(WIDTH),
        h = fx(HEIGHT),
        tx = fx((MARGIN_L + WIDTH - MARGIN_R) / 2.0),
        t = esc(title)
    )
}

fn axes(frame: &Frame, out: &mut String) {
    out.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333\"/>\n",
        fx(MARGIN_L),
        fx(HEIGHT - MARGIN_B),
        fx(WIDTH - MARGIN_R),
        fx(HEIGHT - MARGIN_B)
    ));
    out.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333\"/>\n",
        fx(MARGIN_L),
        fx(MARGIN_T),
        fx(MARGIN_L),
        fx(HEIGHT - MARGIN_B)
    ));
    for i in 0..=4 {
        let y = frame.y0 + (frame.y1 - frame.y0) * i as f64 / 4.0;
        let py = frame.py(y);
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#ddd\"/>\n",
            fx(MARGIN_L),
            fx(py),
            fx(WIDTH - MARGIN_R),
            fx(py)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            fx(MARGIN_L - 6.0),
            fx(py + 4.0),
            format!("{y:.4}")
        ));
    }
}

fn legend(labels: &[String], out: &mut String) {
    for (i, label) in labels.iter().enumerate() {
        let y = MARGIN_T + 14.0 + 18.0 * i as f64;
        let dash = if label == "control" {
            " stroke-dasharray=\"6 3\""
        } else {
            ""
        };
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"2\"{}/>\n",
            fx(WIDTH - MARGIN_R + 10.0),
            fx(y - 4.0),
            fx(WIDTH - MARGIN_R + 34.0),
            fx(y - 4.0),
            color(i),
            dash
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            fx(WIDTH - MARGIN_R + 40.0),
            fx(y),
            esc(label)
        ));
    }
}

fn polyline(points: &[(f64, f64)], stroke: &str, dashed: bool, out: &mut String) {
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{},{}", fx(*x), fx(*y))).collect();
    let dash = if dashed { " stroke-dasharray=\"6 3\"" } else { "" };
    out.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"{}/>\n",
        pts.join(" "),
        stroke,
        dash
    ));
}

/// Flattens similarity rows to labeled sample sets; the label combines
/// condition and series when more than one condition appears.
pub fn similarity_series(rows: &[SimilarityRow]) -> Vec<(String, Vec<f64>)> {
    let conditions: BTreeSet<&str> = rows.iter().map(|r| r.condition.as_str()).collect();
    let mut out: Vec<(String, Vec<f64>)> = rows
        .iter()
        .map(|r| {
            let label = if conditions.len() > 1 {
                format!("{} {}", r.condition, r.series)
            } else {
                r.series.clone()
            };
            (label, r.samples.clone())
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    let iqr = q(0.75) - q(0.25);
    let scale = var.sqrt().min(if iqr > 0.0 { iqr / 1.34 } else { f64::INFINITY });
    let bw = 0.9 * scale * n.powf(-0.2);
    if bw > 1e-9 {
        bw
    } else {
        1e-3
    }
}

fn kde(xs: &[f64], grid: &[f64], bw: f64) -> Vec<f64> {
    let norm = 1.0 / (xs.len() as f64 * bw * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&g| {
            xs.iter()
                .map(|&x| (-0.5 * ((g - x) / bw).powi(2)).exp())
                .sum::<f64>()
                * norm
        })
        .collect()
}

pub fn density_chart(title: &str, series: &[(String, Vec<f64>)]) -> String {
    let mut out = open(title);
    let usable: Vec<&(String, Vec<f64>)> = series.iter().filter(|(_, xs)| !xs.is_empty()).collect();
    if usable.is_empty() {
        out.push_str("<text x=\"400\" y=\"225\" text-anchor=\"middle\">no samples</text>\n</svg>\n");
        return out;
    }
    let lo = usable
        .iter()
        .flat_map(|(_, xs)| xs.iter())
        .fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = usable
        .iter()
        .flat_map(|(_, xs)| xs.iter())
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let pad = ((hi - lo) * 0.15).max(0.02);
    let grid: Vec<f64> = (0..=160)
        .map(|i| lo - pad + (hi - lo + 2.0 * pad) * i as f64 / 160.0)
        .collect();
    let curves: Vec<(String, Vec<f64>)> = usable
        .iter()
        .map(|(label, xs)| (label.clone(), kde(xs, &grid, silverman_bandwidth(xs))))
        .collect();
    let ymax = curves
        .iter()
        .flat_map(|(_, ys)| ys.iter())
        .fold(0.0f64, |a, &b| a.max(b));
    let frame = Frame::new(grid[0], grid[grid.len() - 1], 0.0, ymax * 1.05);
    axes(&frame, &mut out);
    for i in 0..=4 {
        let x = frame.x0 + (frame.x1 - frame.x0) * i as f64 / 4.0;
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            fx(frame.px(x)),
            fx(HEIGHT - MARGIN_B + 18.0),
            format!("{x:.3}")
        ));
    }
    for (i, (label, ys)) in curves.iter().enumerate() {
        let pts: Vec<(f64, f64)> = grid
            .iter()
            .zip(ys)
            .map(|(&x, &y)| (frame.px(x), frame.py(y)))
            .collect();
        polyline(&pts, color(i), label == "control", &mut out);
    }
    legend(&curves.iter().map(|(l, _)| l.clone()).collect::<Vec<_>>(), &mut out);
    out.push_str("</svg>\n");
    out
}

/// Line chart of one metric family: x = condition (report order, unknowns
/// appended sorted), one line per series, control dashed.
pub fn metric_chart(family: &str, conditions: &[String], rows: &[(String, String, f64)]) -> String {
    let mut out = open(&format!("{family} per condition"));
    if rows.is_empty() {
        out.push_str("<text x=\"400\" y=\"225\" text-anchor=\"middle\">no data</text>\n</svg>\n");
        return out;
    }
    let mut conds: Vec<String> = conditions
        .iter()
        .filter(|c| rows.iter().any(|(rc, _, _)| rc == *c))
        .cloned()
        .collect();
    let mut extra: Vec<String> = rows
        .iter()
        .map(|(c, _, _)| c.clone())
        .filter(|c| !conds.contains(c))
        .collect();
    extra.sort();
    extra.dedup();
    conds.extend(extra);

    let mut series: Vec<String> = rows.iter().map(|(_, s, _)| s.clone()).collect();
    series.sort();
    series.dedup();
    // control first so it sits under the data lines
    if let Some(pos) = series.iter().position(|s| s == "control") {
        let c = series.remove(pos);
        series.insert(0, c);
    }

    let ymin = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min).min(0.0);
    let ymax = rows.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    let frame = Frame::new(0.0, (conds.len().max(2) - 1) as f64, ymin, ymax * 1.05 + 1e-12);
    axes(&frame, &mut out);
    for (i, c) in conds.iter().enumerate() {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            fx(frame.px(i as f64)),
            fx(HEIGHT - MARGIN_B + 18.0),
            esc(c)
        ));
    }
    for (si, s) in series.iter().enumerate() {
        let mut pts: Vec<(f64, f64)> = Vec::new();
        for (ci, c) in conds.iter().enumerate() {
            if let Some((_, _, v)) = rows.iter().find(|(rc, rs, _)| rc == c && rs == s) {
                pts.push((frame.px(ci as f64), frame.py(*v)));
            }
        }
        if pts.len() == 1 {
            out.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"{}\"/>\n",
                fx(pts[0].0),
                fx(pts[0].1),
                color(si)
            ));
        } else if !pts.is_empty() {
            polyline(&pts, color(si), s == "control", &mut out);
        }
    }
    legend(&series, &mut out);
    out.push_str("</svg>\n");
    out
}

/// Grouped bars: one cluster per class, one bar per series.
pub fn accuracy_bars(rows: &[AccuracyRow]) -> String {
    let mut out = open("per-class accuracy");
    let classes: BTreeSet<String> = rows
        .iter()
        .flat_map(|r| r.per_class.keys().cloned())
        .collect();
    if classes.is_empty() {
        out.push_str("<text x=\"400\" y=\"225\" text-anchor=\"middle\">no data</text>\n</svg>\n");
        return out;
    }
    let classes: Vec<String> = classes.into_iter().collect();
    let frame = Frame::new(0.0, classes.len() as f64, 0.0, 1.0);
    axes(&frame, &mut out);
    let cluster_w = (WIDTH - MARGIN_L - MARGIN_R) / classes.len() as f64;
    let bar_w = (cluster_w * 0.8) / rows.len() as f64;
    for (ci, class) in classes.iter().enumerate() {
        let x0 = MARGIN_L + ci as f64 * cluster_w + cluster_w * 0.1;
        for (si, row) in rows.iter().enumerate() {
            if let Some(&acc) = row.per_class.get(class) {
                let top = frame.py(acc);
                out.push_str(&format!(
                    "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n",
                    fx(x0 + si as f64 * bar_w),
                    fx(top),
                    fx(bar_w.max(1.0)),
                    fx(HEIGHT - MARGIN_B - top),
                    color(si)
                ));
            }
        }
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{}</text>\n",
            fx(x0 + cluster_w * 0.4),
            fx(HEIGHT - MARGIN_B + 18.0),
            esc(class)
        ));
    }
    legend(
        &rows.iter().map(|r| r.series.clone()).collect::<Vec<_>>(),
        &mut out,
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_chart_is_deterministic_and_well_formed() {
        let series = vec![
            ("dc".to_string(), vec![0.8, 0.85, 0.9, 0.92]),
            ("control".to_string(), vec![0.97, 0.98, 0.99]),
        ];
        let a = density_chart("t", &series);
        let b = density_chart("t", &series);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.ends_with("</svg>\n"));
        assert!(a.contains("stroke-dasharray"));
    }

    #[test]
    fn constant_samples_do_not_break_the_kde() {
        let series = vec![("same".to_string(), vec![1.0; 50])];
        let chart = density_chart("t", &series);
        assert!(chart.contains("polyline"));
        assert!(!chart.contains("NaN"));
    }

    #[test]
    fn metric_chart_orders_conditions_by_report_order() {
        let conds = vec!["b".to_string(), "a".to_string()];
        let rows = vec![
            ("a".to_string(), "dc".to_string(), 0.2),
            ("b".to_string(), "dc".to_string(), 0.1),
        ];
        let chart = metric_chart("cdi", &conds, &rows);
        let pb = chart.find(">b<").unwrap();
        let pa = chart.find(">a<").unwrap();
        assert!(pb < pa);
    }

    #[test]
    fn bars_render_one_rect_per_series_class_pair() {
        let mut pc = std::collections::BTreeMap::new();
        pc.insert("c1".to_string(), 0.5);
        pc.insert("c2".to_string(), 0.75);
        let rows = vec![AccuracyRow {
            series: "base".into(),
            overall: 0.625,
            per_class: pc,
            worst_class: None,
            worst_drop: None,
        }];
        let chart = accuracy_bars(&rows);
        assert_eq!(chart.matches("<rect").count(), 3); // background + 2 bars
    }
}
