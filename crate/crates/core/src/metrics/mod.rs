//! Image quality metrics and evaluation reports.

mod color;
mod fullref;
mod niqe;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imageio::{list_images, load_image, Image};

pub use color::{baseline_gamma, baseline_histeq, channel_histogram, color_divergence, DEFAULT_BINS};
pub use fullref::{psnr, ssim, ssim_with_peak, SSIM_WINDOW};
pub use niqe::{
    fit_niqe_model, fit_niqe_model_images, niqe, NiqeModel, DEFAULT_PATCH, DEFAULT_SHARPNESS_QUANTILE,
    MIN_PRISTINE_IMAGES, NIQE_FEATURES, NIQE_FORMAT_VERSION,
};

pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "id,psnr_db,ssim,niqe,color_divergence";
pub const METRICS_HEADER_NO_NIQE: &str = "id,psnr_db,ssim,color_divergence";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    /// `None` when no NIQE model was supplied.
    pub niqe: Option<f64>,
    pub color_divergence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsSummary {
    pub psnr_db: f64,
    pub ssim: f64,
    pub niqe: Option<f64>,
    pub color_divergence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Sorted by id.
    pub rows: Vec<MetricsRow>,
    pub mean: MetricsSummary,
}

impl MetricsReport {
    /// Sort rows by id and average them.
    pub fn from_rows(mut rows: Vec<MetricsRow>) -> Self {
        rows.sort_by(|a, b| a.id.cmp(&b.id));
        let n = rows.len().max(1) as f64;
        let avg = |f: &dyn Fn(&MetricsRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let niqe = if !rows.is_empty() && rows.iter().all(|r| r.niqe.is_some()) {
            Some(avg(&|r| r.niqe.unwrap_or(0.0)))
        } else {
            None
        };
        let mean = MetricsSummary {
            psnr_db: avg(&|r| r.psnr_db),
            ssim: avg(&|r| r.ssim),
            niqe,
            color_divergence: avg(&|r| r.color_divergence),
        };
        MetricsReport { rows, mean }
    }

    /// Per-image rows. The `niqe` column is left out when no row has a score.
    pub fn to_csv(&self) -> String {
        let with_niqe = self.rows.iter().any(|r| r.niqe.is_some());
        let mut s = String::from(if with_niqe { METRICS_HEADER } else { METRICS_HEADER_NO_NIQE });
        s.push('\n');
        for r in &self.rows {
            let _ = match (with_niqe, r.niqe) {
                (true, n) => {
                    let n = n.map(|v| v.to_string()).unwrap_or_default();
                    writeln!(s, "{},{},{},{},{}", r.id, r.psnr_db, r.ssim, n, r.color_divergence)
                }
                (false, _) => writeln!(s, "{},{},{},{}", r.id, r.psnr_db, r.ssim, r.color_divergence),
            };
        }
        s
    }

    /// One-line aggregate, e.g. `PSNR=18.2 SSIM=0.71 NIQE=4.1 ColorDiv=0.12`.
    pub fn summary_line(&self) -> String {
        let m = &self.mean;
        match m.niqe {
            Some(n) => format!(
                "PSNR={:.4} SSIM={:.4} NIQE={:.4} ColorDiv={:.4}",
                m.psnr_db, m.ssim, n, m.color_divergence
            ),
            None => format!("PSNR={:.4} SSIM={:.4} ColorDiv={:.4}", m.psnr_db, m.ssim, m.color_divergence),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Score one output image against its reference.
pub fn score_pair(id: &str, output: &Image, reference: &Image, model: Option<&NiqeModel>) -> Result<MetricsRow> {
    let (out, refr) = (output.to_rgb(), reference.to_rgb());
    Ok(MetricsRow {
        id: id.to_string(),
        psnr_db: psnr(&out, &refr, 1.0)?,
        ssim: ssim(&out, &refr)?,
        niqe: model.map(|m| niqe(&out, m)).transpose()?,
        color_divergence: color_divergence(&out, DEFAULT_BINS)?,
    })
}

/// Score every image in `output_dir` against the same-stem image in
/// `reference_dir`. Both directories must hold exactly the same ids.
pub fn evaluate(output_dir: &Path, reference_dir: &Path, model: Option<&NiqeModel>) -> Result<MetricsReport> {
    let outs = list_images(output_dir)?;
    let refs = list_images(reference_dir)?;
    let only_first: Vec<String> = outs.keys().filter(|k| !refs.contains_key(*k)).cloned().collect();
    let only_second: Vec<String> = refs.keys().filter(|k| !outs.contains_key(*k)).cloned().collect();
    if !only_first.is_empty() || !only_second.is_empty() {
        return Err(Error::IdMismatch { only_first, only_second });
    }
    if outs.is_empty() {
        return Err(Error::EmptyIntersection {
            low: output_dir.to_path_buf(),
            high: reference_dir.to_path_buf(),
        });
    }
    let rows = outs
        .par_iter()
        .map(|(id, p)| score_pair(id, &load_image(p)?, &load_image(&refs[id])?, model))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::save_image;
    use crate::synthetic::synthetic_scene;

    fn write_dir(dir: &Path, ids: &[&str], seed: u64) {
        fs::create_dir_all(dir).unwrap();
        for (i, id) in ids.iter().enumerate() {
            let img = synthetic_scene(24, 24, seed + i as u64).unwrap();
            save_image(&img, dir.join(format!("{id}.png"))).unwrap();
        }
    }

    #[test]
    fn identical_dirs() {
        let t = tempfile::tempdir().unwrap();
        write_dir(&t.path().join("a"), &["x", "y"], 1);
        write_dir(&t.path().join("b"), &["x", "y"], 1);
        let r = evaluate(&t.path().join("a"), &t.path().join("b"), None).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r.rows.iter().all(|row| row.psnr_db == f64::INFINITY && (row.ssim - 1.0).abs() < 1e-12));
        assert!(r.to_csv().starts_with(METRICS_HEADER_NO_NIQE));
        assert_eq!(r.summary_line(), "PSNR=inf SSIM=1.0000 ColorDiv=".to_string() + &format!("{:.4}", r.mean.color_divergence));
    }

    #[test]
    fn mismatched_ids() {
        let t = tempfile::tempdir().unwrap();
        write_dir(&t.path().join("a"), &["x", "y"], 1);
        write_dir(&t.path().join("b"), &["x", "z"], 1);
        match evaluate(&t.path().join("a"), &t.path().join("b"), None) {
            Err(Error::IdMismatch { only_first, only_second }) => {
                assert_eq!(only_first, ["y"]);
                assert_eq!(only_second, ["z"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn aggregate_is_order_free_mean() {
        let row = |id: &str, p: f64| MetricsRow {
            id: id.into(),
            psnr_db: p,
            ssim: p / 100.0,
            niqe: None,
            color_divergence: p / 10.0,
        };
        let a = MetricsReport::from_rows(vec![row("a", 10.1), row("b", 20.7), row("c", 3.3)]);
        let b = MetricsReport::from_rows(vec![row("c", 3.3), row("a", 10.1), row("b", 20.7)]);
        assert_eq!(a, b);
        assert!((a.mean.psnr_db - (10.1 + 20.7 + 3.3) / 3.0).abs() < 1e-12);
        assert_eq!(a.mean.niqe, None);
    }
}
