//! Metric tables and SVG plots.
//!
//! `emit_outputs` writes, into the output directory:
//!
//! | file | content |
//! |------|---------|
//! | `metrics.csv` | one row per run, then one `mean` row per arm |
//! | `metrics.json` | the full report, including epoch logs and ROC points |
//! | `roc_<arm>.svg` | ROC curves of every run of the arm |
//! | `loss_<arm>.svg` | per-epoch training loss of every run of the arm |
//!
//! Wall-clock times are deliberately excluded so identical inputs give
//! byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::experiment::Report;
use crate::trainer::EpochLog;

pub const CSV_HEADER: &str = "arm,target,seed,auc,hter,threshold";

pub fn metrics_csv(report: &Report) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &report.runs {
        let _ = writeln!(out, "{},{},{},{:.6},{:.6},{:.6}", r.arm, r.target, r.seed, r.auc, r.hter, r.threshold);
    }
    for s in &report.summary {
        let _ = writeln!(out, "{},mean,,{:.6},{:.6},", s.arm, s.mean_auc, s.mean_hter);
    }
    out
}

/// Markdown-style comparison table of the arm means.
pub fn summary_table(report: &Report) -> String {
    let mut out = String::from("| arm | runs | mean AUC | mean HTER |\n|---|---|---|---|\n");
    for s in &report.summary {
        let _ = writeln!(out, "| {} | {} | {:.4} | {:.4} |", s.arm, s.runs, s.mean_auc, s.mean_hter);
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// A standalone SVG line chart. Each series is `(label, points)`; axes span
/// the given ranges.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)], x_range: (f64, f64), y_range: (f64, f64)) -> String {
    let (w, h, left, right, top, bottom) = (480.0, 360.0, 60.0, 20.0, 36.0, 48.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let span = |r: (f64, f64)| if r.1 > r.0 { r.1 - r.0 } else { 1.0 };
    let sx = |x: f64| left + (x - x_range.0) / span(x_range) * pw;
    let sy = |y: f64| top + ph - (y - y_range.0) / span(y_range) * ph;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" font-size="14" text-anchor="middle" font-family="sans-serif">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x_range.0 + f * span(x_range);
        let yv = y_range.0 + f * span(y_range);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle" font-family="sans-serif">{:.2}</text>"#, sx(xv), top + ph + 14.0, xv);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end" font-family="sans-serif">{:.2}</text>"#, left - 4.0, sy(yv) + 3.0, yv);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle" font-family="sans-serif">{}</text>"#, left + pw / 2.0, h - 10.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 14 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#, coords.join(" "), escape(label));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="9" fill="{color}" font-family="sans-serif">{}</text>"#, left + 6.0, top + 12.0 + 11.0 * i as f64, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

pub fn roc_svg(title: &str, curves: &[(String, Vec<(f64, f64)>)]) -> String {
    line_chart(title, "false positive rate", "true positive rate", curves, (0.0, 1.0), (0.0, 1.0))
}

/// Total training loss per epoch for each labelled log.
pub fn loss_svg(title: &str, runs: &[(String, &[EpochLog])]) -> String {
    let series: Vec<(String, Vec<(f64, f64)>)> = runs
        .iter()
        .map(|(label, logs)| (label.clone(), logs.iter().map(|l| (l.epoch as f64, l.loss_total)).collect()))
        .collect();
    let xs = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0));
    let ys: Vec<f64> = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)).collect();
    let x_max = xs.fold(1.0, f64::max);
    let y_max = ys.iter().copied().fold(0.0, f64::max);
    line_chart(title, "epoch", "training loss", &series, (1.0, x_max), (0.0, if y_max > 0.0 { y_max * 1.05 } else { 1.0 }))
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

/// Writes the metric tables and plots; returns the written paths.
pub fn emit_outputs(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put("metrics.csv".into(), metrics_csv(report))?;
    put("metrics.json".into(), serde_json::to_string_pretty(report)? + "\n")?;
    for s in &report.summary {
        let runs: Vec<_> = report.runs.iter().filter(|r| r.arm == s.arm).collect();
        let curves: Vec<(String, Vec<(f64, f64)>)> = runs.iter().map(|r| (format!("{} s{}", r.target, r.seed), r.roc.clone())).collect();
        put(format!("roc_{}.svg", sanitize(&s.arm)), roc_svg(&format!("ROC: {}", s.arm), &curves))?;
        let logs: Vec<(String, &[EpochLog])> = runs.iter().map(|r| (format!("{} s{}", r.target, r.seed), r.logs.as_slice())).collect();
        put(format!("loss_{}.svg", sanitize(&s.arm)), loss_svg(&format!("Training loss: {}", s.arm), &logs))?;
    }
    Ok(written)
}
