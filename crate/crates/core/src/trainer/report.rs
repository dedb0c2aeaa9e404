//! CSV and SVG output for training records.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::Result;

use super::TrainRecord;

pub const CSV_HEADER: &str = "step,loss,accuracy,entropy,winner_logratio,loser_logratio,bound_slack";

pub fn write_csv<W: Write>(mut out: W, records: &[TrainRecord]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step, r.loss, r.accuracy, r.entropy, r.winner_logratio, r.loser_logratio, r.bound_slack
        )?;
    }
    Ok(())
}

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 220.0;
const PAD: f64 = 40.0;

fn panel(svg: &mut String, ox: f64, oy: f64, title: &str, series: &[(&str, &str, Vec<(f64, f64)>)]) {
    let pts: Vec<(f64, f64)> =
        series.iter().flat_map(|s| s.2.iter().copied()).filter(|p| p.1.is_finite()).collect();
    let _ = write!(
        svg,
        r##"<g transform="translate({ox},{oy})"><rect x="0" y="0" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#999"/><text x="{}" y="16" font-size="13" text-anchor="middle">{title}</text>"##,
        PANEL_W / 2.0
    );
    if pts.is_empty() {
        svg.push_str("</g>");
        return;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (PANEL_W - 1.5 * PAD);
    let sy = |y: f64| PANEL_H - PAD + (y0 - y) / (y1 - y0) * (PANEL_H - 1.5 * PAD - 10.0);
    let _ = write!(
        svg,
        r#"<text x="4" y="{:.1}" font-size="10">{y1:.3}</text><text x="4" y="{:.1}" font-size="10">{y0:.3}</text><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">step {x1}</text>"#,
        sy(y1) + 4.0,
        sy(y0),
        PANEL_W - PAD / 2.0,
        PANEL_H - 8.0
    );
    for (i, (name, color, s)) in series.iter().enumerate() {
        let path: Vec<String> = s
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = write!(
            svg,
            r##"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/><text x="{:.1}" y="{:.1}" font-size="10" fill="{color}">{name}</text>"##,
            path.join(" "),
            PAD + 4.0 + 110.0 * i as f64,
            30.0
        );
    }
    svg.push_str("</g>");
}

/// Four line charts: loss, accuracy, entropy and the two log-ratios.
pub fn render_svg(records: &[TrainRecord]) -> String {
    let col = |f: fn(&TrainRecord) -> f64| -> Vec<(f64, f64)> {
        records.iter().map(|r| (r.step as f64, f(r))).collect()
    };
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif">"#,
        2.0 * PANEL_W + 30.0,
        2.0 * PANEL_H + 30.0
    );
    let (a, b) = (10.0, 20.0 + PANEL_W);
    let (c, d) = (10.0, 20.0 + PANEL_H);
    panel(&mut svg, a, c, "loss", &[("loss", "#1f77b4", col(|r| r.loss))]);
    panel(&mut svg, b, c, "accuracy", &[("accuracy", "#2ca02c", col(|r| r.accuracy))]);
    panel(&mut svg, a, d, "entropy", &[("entropy", "#9467bd", col(|r| r.entropy))]);
    panel(
        &mut svg,
        b,
        d,
        "log(pi/pi_ref)",
        &[
            ("winner", "#2ca02c", col(|r| r.winner_logratio)),
            ("loser", "#d62728", col(|r| r.loser_logratio)),
        ],
    );
    svg.push_str("</svg>\n");
    svg
}
