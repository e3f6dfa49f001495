//! Plain CSV series and small self-contained SVG charts.
//!
//! Output depends only on the input numbers: coordinates are printed with a
//! fixed precision and no timestamps or random ids are embedded.

use std::fmt::Write as _;

use icp_core::hsic::HsicMatrix;
use icp_core::icp::GreedyTrace;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 2] = ["#1f77b4", "#d62728"];

pub struct Series<'a> {
    pub name: &'a str,
    pub values: Vec<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Line chart over categorical x positions with a fixed y range.
pub fn line_chart(title: &str, labels: &[String], series: &[Series], y_range: (f64, f64), rule: Option<f64>) -> String {
    let (y0, y1) = y_range;
    let n = labels.len().max(2);
    let x = |i: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / (n - 1) as f64;
    let y = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * ((v - y0) / (y1 - y0)).clamp(0.0, 1.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{m:.1} {t:.1} V{b:.1} H{r:.1}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    for k in 0..=4 {
        let v = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, MARGIN - 4.0, y(v) + 3.0);
    }
    for (i, label) in labels.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" transform="rotate(-45 {:.1} {:.1})">{}</text>"#,
            x(i),
            HEIGHT - MARGIN + 12.0,
            x(i),
            HEIGHT - MARGIN + 12.0,
            escape(label)
        );
    }
    if let Some(r) = rule {
        let _ = writeln!(
            s,
            r##"<line x1="{:.1}" y1="{yr:.1}" x2="{:.1}" y2="{yr:.1}" stroke="#888888" stroke-dasharray="4 3"/>"##,
            MARGIN,
            WIDTH - MARGIN,
            yr = y(r)
        );
    }
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> =
            ser.values.iter().enumerate().map(|(i, &v)| format!("{:.1},{:.1}", x(i), y(v))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" stroke="{color}" fill="none"/>"#, points.join(" "));
        for p in &points {
            let (cx, cy) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>"#);
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
            WIDTH - MARGIN - 120.0,
            MARGIN + 14.0 * k as f64,
            escape(ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Grey-scale grid of a square matrix with values in [0, 1].
pub fn heatmap(title: &str, names: &[String], values: &[Vec<f64>]) -> String {
    let g = names.len().max(1);
    let cell = ((WIDTH - 2.0 * MARGIN) / g as f64).min(40.0);
    let left = MARGIN + 40.0;
    let top = MARGIN;
    let side = left + cell * g as f64 + MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{side:.1}" height="{h:.1}" viewBox="0 0 {side:.1} {h:.1}" font-family="sans-serif" font-size="9">"#,
        h = top + cell * g as f64 + MARGIN + 40.0
    );
    let _ = writeln!(s, r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{}</text>"#, side / 2.0, escape(title));
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
            let _ = writeln!(
                s,
                r##"<rect x="{:.1}" y="{:.1}" width="{cell:.1}" height="{cell:.1}" fill="#{shade:02x}{shade:02x}{shade:02x}"><title>{} / {}: {v:.4}</title></rect>"##,
                left + cell * j as f64,
                top + cell * i as f64,
                escape(&names[i]),
                escape(&names[j])
            );
        }
    }
    for (i, name) in names.iter().enumerate() {
        let c = cell * i as f64 + cell / 2.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, left - 4.0, top + c + 3.0, escape(name));
        let bx = left + c;
        let by = top + cell * g as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<text x="{bx:.1}" y="{by:.1}" text-anchor="end" transform="rotate(-60 {bx:.1} {by:.1})">{}</text>"#,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// `(file name, contents)` pairs for a greedy trace.
pub fn greedy_figures(trace: &GreedyTrace, alpha: f64) -> Vec<(String, String)> {
    let labels: Vec<String> = trace.steps.iter().map(|s| s.removed_group.clone()).collect();
    let mut p_csv = String::from("step,removed,p_value\n");
    let mut auc_csv = String::from("step,removed,auc_with_env,auc_without_env\n");
    for (i, s) in trace.steps.iter().enumerate() {
        let _ = writeln!(p_csv, "{},{},{}", i + 1, s.removed_group, s.p_value_of_removal);
        let _ = writeln!(auc_csv, "{},{},{},{}", i + 1, s.removed_group, s.auc_with_env, s.auc_without_env);
    }
    let p_svg = line_chart(
        "p-value of removal",
        &labels,
        &[Series { name: "p-value", values: trace.steps.iter().map(|s| s.p_value_of_removal).collect() }],
        (0.0, 1.0),
        Some(alpha),
    );
    let aucs = |f: fn(&icp_core::icp::GreedyStep) -> f64| trace.steps.iter().map(f).collect::<Vec<_>>();
    let with = aucs(|s| s.auc_with_env);
    let without = aucs(|s| s.auc_without_env);
    let lo = with.iter().chain(&without).copied().fold(1.0f64, f64::min);
    let lo = ((lo * 10.0).floor() / 10.0).clamp(0.0, 0.9);
    let auc_svg = line_chart(
        "out-of-sample AUC",
        &labels,
        &[Series { name: "with environment", values: with }, Series { name: "without environment", values: without }],
        (lo, 1.0),
        None,
    );
    vec![
        ("p_values.csv".into(), p_csv),
        ("p_values.svg".into(), p_svg),
        ("auc.csv".into(), auc_csv),
        ("auc.svg".into(), auc_svg),
    ]
}

pub fn hsic_figures(matrix: &HsicMatrix) -> Vec<(String, String)> {
    let mut csv = String::from("group");
    for n in &matrix.group_names {
        csv.push(',');
        csv.push_str(n);
    }
    csv.push('\n');
    for (n, row) in matrix.group_names.iter().zip(&matrix.values) {
        csv.push_str(n);
        for v in row {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    vec![
        ("hsic_heatmap.csv".into(), csv),
        ("hsic_heatmap.svg".into(), heatmap("normalized HSIC", &matrix.group_names, &matrix.values)),
    ]
}
