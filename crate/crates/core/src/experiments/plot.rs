//! Minimal SVG line charts from result rows.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::ResultRow;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Renders one polyline per labelled series.
pub fn line_chart(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let pts = series.iter().flat_map(|(_, s)| s.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<path d="M{PAD} {PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    let _ = writeln!(svg, r#"<text x="{PAD}" y="{}" text-anchor="middle">{}</text>"#, H - PAD + 15.0, fmt_num(x0));
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W - PAD, H - PAD + 15.0, fmt_num(x1));
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, PAD - 4.0, H - PAD, fmt_num(y0));
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, PAD - 4.0, PAD + 4.0, fmt_num(y1));
    for (k, (label, s)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let d: Vec<String> = s
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.join(" "));
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - PAD + 4.0 - 120.0,
            PAD + 14.0 * (k as f64 + 1.0),
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn fmt_num(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-3) {
        format!("{v:.2e}")
    } else {
        format!("{:.3}", v)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One chart per metric that has more than one step, one line per seed.
pub fn metric_charts(rows: &[ResultRow]) -> Vec<(String, String)> {
    let mut by_metric: BTreeMap<&str, BTreeMap<u64, Vec<(f64, f64)>>> = BTreeMap::new();
    for r in rows {
        by_metric.entry(&r.metric).or_default().entry(r.seed).or_default().push((r.step as f64, r.value));
    }
    by_metric
        .into_iter()
        .filter(|(_, seeds)| seeds.values().any(|s| s.len() > 1))
        .map(|(metric, seeds)| {
            let series: Vec<(String, Vec<(f64, f64)>)> = seeds.into_iter().map(|(seed, s)| (format!("seed {seed}"), s)).collect();
            (metric.to_string(), line_chart(metric, &series))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_has_one_polyline_per_series() {
        let s = vec![("a".to_string(), vec![(0.0, 1.0), (1.0, 2.0)]), ("b<".to_string(), vec![(0.0, 0.5)])];
        let svg = line_chart("t & t", &s);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("t &amp; t") && svg.contains("b&lt;"));
    }

    #[test]
    fn summary_metrics_are_skipped() {
        let rows = vec![
            ResultRow::new("x", 1, 0, "curve", 1.0),
            ResultRow::new("x", 1, 1, "curve", 0.5),
            ResultRow::new("x", 1, 0, "summary", 3.0),
        ];
        let charts = metric_charts(&rows);
        assert_eq!(charts.len(), 1);
        assert_eq!(charts[0].0, "curve");
    }
}
