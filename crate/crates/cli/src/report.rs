//! Static report files: loss curve CSV + SVG, per-image channel histograms.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use lowlight_core::metrics::channel_histogram;
use lowlight_core::trainer::StepRecord;
use lowlight_core::Image;

pub const HIST_BINS: usize = 64;

pub fn loss_curve_svg(log: &[StepRecord]) -> String {
    let (w, h, pad) = (640.0, 360.0, 40.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let finite: Vec<&StepRecord> = log.iter().filter(|r| r.loss.total.is_finite()).collect();
    if finite.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let max_step = finite.iter().map(|r| r.step).max().unwrap_or(1).max(1) as f64;
    let series: [(&str, fn(&StepRecord) -> f64, &str); 5] = [
        ("total", |r| r.loss.total, "black"),
        ("rec", |r| r.loss.rec, "#1f77b4"),
        ("decom", |r| r.loss.decom, "#ff7f0e"),
        ("sps", |r| r.loss.sps, "#2ca02c"),
        ("noise", |r| r.loss.noise, "#d62728"),
    ];
    let ymax = finite
        .iter()
        .flat_map(|r| series.iter().map(move |(_, f, _)| f(r)))
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let _ = writeln!(
        s,
        r#"<path d="M{pad} {pad} V{} H{}" stroke="gray" fill="none"/>"#,
        h - pad,
        w - pad
    );
    for (i, (name, f, color)) in series.iter().enumerate() {
        let pts: Vec<String> = finite
            .iter()
            .map(|r| {
                let x = pad + (w - 2.0 * pad) * r.step as f64 / max_step;
                let y = h - pad - (h - 2.0 * pad) * f(r) / ymax;
                format!("{x:.1},{y:.1}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="1.2"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{name}</text>"#,
            w - pad - 60.0,
            pad + 14.0 * i as f64
        );
    }
    let _ = writeln!(s, r#"<text x="{pad}" y="{}" font-size="12">step (max {max_step})</text>"#, h - 10.0);
    let _ = writeln!(s, r#"<text x="4" y="{}" font-size="12">loss (max {ymax:.4})</text>"#, pad - 10.0);
    s.push_str("</svg>\n");
    s
}

/// One row per channel: `id,channel,b0,...,b63`, each row summing to 1.
pub fn histogram_rows(id: &str, img: &Image) -> String {
    let img = img.to_rgb();
    let mut s = String::new();
    for (c, name) in ["r", "g", "b"].iter().enumerate() {
        let h = channel_histogram(img.plane(c), HIST_BINS);
        let cells: Vec<String> = h.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{id},{name},{}", cells.join(","));
    }
    s
}

pub fn histogram_header() -> String {
    let bins: Vec<String> = (0..HIST_BINS).map(|i| format!("b{i}")).collect();
    format!("id,channel,{}\n", bins.join(","))
}

pub fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
