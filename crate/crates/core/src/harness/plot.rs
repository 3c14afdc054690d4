//! Minimal SVG renderings of ROC curves and confusion matrices.

use std::fmt::Write as _;

use crate::metrics::{auc, ConfusionMatrix, RocCurve};

const W: f64 = 420.0;
const H: f64 = 420.0;
const M: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn roc_svg(curve: &RocCurve, title: &str) -> String {
    let side = W - 2.0 * M;
    let x = |fpr: f64| M + fpr * side;
    let y = |tpr: f64| H - M - tpr * side;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{M}" y="{M}" width="{side}" height="{side}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#,
            x(v),
            H - M + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            M - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="grey" stroke-dasharray="4 4"/>"#,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    let pts: Vec<String> = curve
        .points
        .iter()
        .map(|p| format!("{:.2},{:.2}", x(p.fpr), y(p.tpr)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        pts.join(" ")
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{} (AUC {:.3})</text>"#,
        W / 2.0,
        M - 18.0,
        escape(title),
        auc(curve)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">False positive rate</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">True positive rate</text>"#,
        H / 2.0,
        H / 2.0
    );
    s.push_str("</svg>\n");
    s
}

/// 2×2 heatmap with actual class on rows and decision on columns.
pub fn confusion_svg(cm: &ConfusionMatrix, title: &str) -> String {
    let cells = [[cm.tp, cm.fn_], [cm.fp, cm.tn]];
    let max = cells.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let cell = (W - 2.0 * M - 40.0) / 2.0;
    let x0 = M + 40.0;
    let y0 = M + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="13">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        W / 2.0,
        M - 20.0,
        escape(title)
    );
    for (c, label) in ["accept", "reject"].iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#,
            x0 + (c as f64 + 0.5) * cell,
            y0 - 6.0
        );
    }
    for (r, label) in ["genuine", "imposter"].iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#,
            x0 - 6.0,
            y0 + (r as f64 + 0.5) * cell
        );
        for c in 0..2 {
            let v = cells[r][c];
            let shade = 255 - (200.0 * v as f64 / max).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{cell:.1}" height="{cell:.1}" fill="rgb({shade},{shade},255)" stroke="black"/>"#,
                x0 + c as f64 * cell,
                y0 + r as f64 * cell
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="18">{v}</text>"#,
                x0 + (c as f64 + 0.5) * cell,
                y0 + (r as f64 + 0.5) * cell + 6.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
