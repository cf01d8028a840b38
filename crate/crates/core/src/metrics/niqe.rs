//! Natural Image Quality Evaluator.
//!
//! Per patch, at two scales: a generalized Gaussian fit of the MSCN
//! coefficients (shape, variance) and asymmetric generalized Gaussian fits of
//! four neighbor products (shape, mean, left and right variance). 18 features
//! per scale, 36 in total. The score is the Mahalanobis-like distance between
//! the image's feature Gaussian and the pristine model.
//!
//! Model file layout, little-endian:
//!
//! ```text
//! magic       8 bytes  b"LLNIQE\0\0"
//! version     u32
//! n_features  u32      36
//! patch       u32
//! quantile    f64      sharpness quantile used for patch selection
//! n_images    u64
//! n_patches   u64
//! mean        36 × f64
//! covariance  36 × 36 × f64, row-major
//! ```

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use super::fullref::gaussian_kernel;
use crate::error::{Error, Result};
use crate::imageio::{list_images, load_image, Image};

pub const NIQE_FEATURES: usize = 36;
pub const DEFAULT_PATCH: usize = 96;
pub const DEFAULT_SHARPNESS_QUANTILE: f64 = 0.75;
pub const MIN_PRISTINE_IMAGES: usize = 10;
pub const NIQE_MAGIC: &[u8; 8] = b"LLNIQE\0\0";
pub const NIQE_FORMAT_VERSION: u32 = 1;

const HALF: usize = NIQE_FEATURES / 2;
const SHIFTS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

/// Pristine feature Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct NiqeModel {
    pub mean: Vec<f64>,
    /// Row-major 36×36.
    pub covariance: Vec<f64>,
    pub patch: usize,
    pub sharpness_quantile: f64,
    pub n_images: usize,
    pub n_patches: usize,
}

struct Gray {
    data: Vec<f64>,
    h: usize,
    w: usize,
}

impl Gray {
    fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    fn downsample2(&self) -> Gray {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let s = self.at(2 * y, 2 * x)
                    + self.at(2 * y, 2 * x + 1)
                    + self.at(2 * y + 1, 2 * x)
                    + self.at(2 * y + 1, 2 * x + 1);
                data.push(s / 4.0);
            }
        }
        Gray { data, h, w }
    }

    /// Separable Gaussian blur with replicated borders.
    fn blur(&self, src: &[f64], k: &[f64]) -> Vec<f64> {
        let r = (k.len() / 2) as isize;
        let (h, w) = (self.h as isize, self.w as isize);
        let mut tmp = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                tmp[(y * w + x) as usize] = k
                    .iter()
                    .enumerate()
                    .map(|(i, kv)| kv * src[(y * w + (x + i as isize - r).clamp(0, w - 1)) as usize])
                    .sum();
            }
        }
        let mut out = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                out[(y * w + x) as usize] = k
                    .iter()
                    .enumerate()
                    .map(|(i, kv)| kv * tmp[((y + i as isize - r).clamp(0, h - 1) * w + x) as usize])
                    .sum();
            }
        }
        out
    }

    /// Mean-subtracted contrast-normalized coefficients and the local deviation map.
    fn mscn(&self) -> (Gray, Vec<f64>) {
        let k = gaussian_kernel(7, 7.0 / 6.0);
        let mu = self.blur(&self.data, &k);
        let sq: Vec<f64> = self.data.iter().map(|v| v * v).collect();
        let mu2 = self.blur(&sq, &k);
        let sigma: Vec<f64> = mu.iter().zip(&mu2).map(|(m, m2)| (m2 - m * m).abs().sqrt()).collect();
        let data = self
            .data
            .iter()
            .zip(&mu)
            .zip(&sigma)
            .map(|((v, m), s)| (v - m) / (s + 1.0))
            .collect();
        (Gray { data, h: self.h, w: self.w }, sigma)
    }
}

/// `(shape, Γ(1/a)Γ(3/a)/Γ(2/a)²)` on the grid 0.2, 0.201, ..., 10.
fn shape_table() -> &'static [(f64, f64)] {
    static TABLE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..=9800)
            .map(|i| {
                let a = 0.2 + i as f64 * 0.001;
                (a, (ln_gamma(1.0 / a) + ln_gamma(3.0 / a) - 2.0 * ln_gamma(2.0 / a)).exp())
            })
            .collect()
    })
}

fn closest_shape(target: f64, reciprocal: bool) -> f64 {
    shape_table()
        .iter()
        .map(|&(a, r)| (a, ((if reciprocal { 1.0 / r } else { r }) - target).abs()))
        .fold((2.0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        .0
}

/// Generalized Gaussian by moment matching: (shape, variance).
fn ggd_fit(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let var = x.iter().map(|v| v * v).sum::<f64>() / n;
    let e = x.iter().map(|v| v.abs()).sum::<f64>() / n;
    if e == 0.0 {
        return (2.0, 0.0);
    }
    (closest_shape(var / (e * e), false), var)
}

/// Asymmetric generalized Gaussian: (shape, mean, left variance, right variance).
fn aggd_fit(x: &[f64]) -> [f64; 4] {
    let (mut ls, mut ln, mut rs, mut rn) = (0.0, 0usize, 0.0, 0usize);
    let (mut abs_sum, mut sq_sum) = (0.0, 0.0);
    for &v in x {
        if v < 0.0 {
            ls += v * v;
            ln += 1;
        } else if v > 0.0 {
            rs += v * v;
            rn += 1;
        }
        abs_sum += v.abs();
        sq_sum += v * v;
    }
    if sq_sum == 0.0 {
        return [2.0, 0.0, 0.0, 0.0];
    }
    let left = if ln > 0 { (ls / ln as f64).sqrt() } else { 0.0 };
    let right = if rn > 0 { (rs / rn as f64).sqrt() } else { 0.0 };
    let g = if right > 0.0 { left / right } else { 1.0 };
    let n = x.len() as f64;
    let rhat = (abs_sum / n).powi(2) / (sq_sum / n);
    let rnorm = rhat * (g.powi(3) + 1.0) * (g + 1.0) / (g * g + 1.0).powi(2);
    let a = closest_shape(rnorm, true);
    let eta = (right - left) * (ln_gamma(2.0 / a) - ln_gamma(1.0 / a)).exp()
        * (ln_gamma(1.0 / a) - ln_gamma(3.0 / a)).exp().sqrt();
    [a, eta, left * left, right * right]
}

fn patch_features(m: &Gray, top: usize, left: usize, p: usize, out: &mut [f64]) {
    let coeffs: Vec<f64> = (top..top + p)
        .flat_map(|y| (left..left + p).map(move |x| (y, x)))
        .map(|(y, x)| m.at(y, x))
        .collect();
    let (a, v) = ggd_fit(&coeffs);
    out[0] = a;
    out[1] = v;
    for (k, &(dy, dx)) in SHIFTS.iter().enumerate() {
        let mut prods = Vec::with_capacity(p * p);
        for y in top..top + p {
            for x in left..left + p {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < top as isize || ny >= (top + p) as isize || nx < left as isize || nx >= (left + p) as isize {
                    continue;
                }
                prods.push(m.at(y, x) * m.at(ny as usize, nx as usize));
            }
        }
        out[2 + 4 * k..6 + 4 * k].copy_from_slice(&aggd_fit(&prods));
    }
}

/// Per-patch 36-feature vectors and sharpness over a non-overlapping grid.
fn image_patches(img: &Image, patch: usize) -> Vec<(Vec<f64>, f64)> {
    let luma = img.luma();
    let (rows, cols) = (img.height() / patch, img.width() / patch);
    let (h, w) = (rows * patch, cols * patch);
    let data = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .map(|(y, x)| 255.0 * luma.get(0, y, x))
        .collect();
    let scale1 = Gray { data, h, w };
    let scale2 = scale1.downsample2();
    let (m1, sigma) = scale1.mscn();
    let (m2, _) = scale2.mscn();
    let half = patch / 2;

    let cells: Vec<(usize, usize)> = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).collect();
    cells
        .par_iter()
        .map(|&(r, c)| {
            let mut f = vec![0.0; NIQE_FEATURES];
            patch_features(&m1, r * patch, c * patch, patch, &mut f[..HALF]);
            patch_features(&m2, r * half, c * half, half, &mut f[HALF..]);
            let mut sharp = 0.0;
            for y in r * patch..(r + 1) * patch {
                sharp += sigma[y * w + c * patch..y * w + (c + 1) * patch].iter().sum::<f64>();
            }
            (f, sharp / (patch * patch) as f64)
        })
        .collect()
}

/// Linear-interpolated quantile of unsorted values.
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn mean_cov(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len();
    let d = NIQE_FEATURES;
    let mut mean = vec![0.0; d];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    if n > 1 {
        for i in 0..d {
            for j in i..d {
                let s: f64 = rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum();
                cov[i * d + j] = s / (n - 1) as f64;
                cov[j * d + i] = cov[i * d + j];
            }
        }
    }
    (mean, cov)
}

fn check_patch(patch: usize) -> Result<()> {
    if patch < 8 || !patch.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("NIQE patch must be even and at least 8, got {patch}")));
    }
    Ok(())
}

/// Fit a pristine model from in-memory images. Each image keeps its patches
/// whose sharpness reaches that image's `sharpness_quantile`.
pub fn fit_niqe_model_images(images: &[Image], patch: usize, sharpness_quantile: f64) -> Result<NiqeModel> {
    check_patch(patch)?;
    if !(0.0..=1.0).contains(&sharpness_quantile) {
        return Err(Error::InvalidArgument(format!("sharpness quantile {sharpness_quantile} outside [0, 1]")));
    }
    if images.len() < MIN_PRISTINE_IMAGES {
        return Err(Error::TooFewImages {
            needed: MIN_PRISTINE_IMAGES,
            found: images.len(),
        });
    }
    let per_image: Vec<Vec<Vec<f64>>> = images
        .par_iter()
        .map(|img| {
            let patches = image_patches(img, patch);
            if patches.is_empty() {
                return Vec::new();
            }
            let sharp: Vec<f64> = patches.iter().map(|p| p.1).collect();
            let th = quantile(&sharp, sharpness_quantile);
            patches.into_iter().filter(|p| p.1 >= th).map(|p| p.0).collect()
        })
        .collect();
    let rows: Vec<Vec<f64>> = per_image.into_iter().flatten().collect();
    if rows.len() < 2 {
        return Err(Error::TooFewPatches { needed: 2, found: rows.len() });
    }
    let (mean, covariance) = mean_cov(&rows);
    Ok(NiqeModel {
        mean,
        covariance,
        patch,
        sharpness_quantile,
        n_images: images.len(),
        n_patches: rows.len(),
    })
}

/// Fit from every PNG/JPEG in a directory.
pub fn fit_niqe_model(pristine_dir: &Path, patch: usize, sharpness_quantile: f64) -> Result<NiqeModel> {
    let images = list_images(pristine_dir)?
        .values()
        .map(load_image)
        .collect::<Result<Vec<_>>>()?;
    fit_niqe_model_images(&images, patch, sharpness_quantile)
}

/// Quality score, lower is better.
pub fn niqe(img: &Image, model: &NiqeModel) -> Result<f64> {
    let p = model.patch;
    let (h, w, _) = img.dims();
    if h < 2 * p || w < 2 * p {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            min: 2 * p,
        });
    }
    let rows: Vec<Vec<f64>> = image_patches(img, p).into_iter().map(|x| x.0).collect();
    let (mu, cov) = mean_cov(&rows);
    let d = NIQE_FEATURES;
    let mut m = DMatrix::from_fn(d, d, |i, j| (model.covariance[i * d + j] + cov[i * d + j]) / 2.0);
    let trace = m.trace();
    let ridge = if trace > 0.0 { 1e-6 * trace / d as f64 } else { 1e-6 };
    for i in 0..d {
        m[(i, i)] += ridge;
    }
    let pinv = m
        .pseudo_inverse(1e-12 * ridge)
        .map_err(|e| Error::InvalidArgument(format!("NIQE covariance: {e}")))?;
    let diff = DVector::from_fn(d, |i, _| model.mean[i] - mu[i]);
    let q = diff.dot(&(pinv * &diff));
    Ok(q.max(0.0).sqrt())
}

impl NiqeModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * (NIQE_FEATURES + NIQE_FEATURES * NIQE_FEATURES));
        out.extend_from_slice(NIQE_MAGIC);
        out.extend_from_slice(&NIQE_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(NIQE_FEATURES as u32).to_le_bytes());
        out.extend_from_slice(&(self.patch as u32).to_le_bytes());
        out.extend_from_slice(&self.sharpness_quantile.to_le_bytes());
        out.extend_from_slice(&(self.n_images as u64).to_le_bytes());
        out.extend_from_slice(&(self.n_patches as u64).to_le_bytes());
        for v in self.mean.iter().chain(&self.covariance) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let d = NIQE_FEATURES;
        let header = 8 + 4 + 4 + 4 + 8 + 8 + 8;
        if b.len() < 12 || &b[..8] != NIQE_MAGIC {
            return Err(Error::CorruptNiqeModel("missing header".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != NIQE_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: NIQE_FORMAT_VERSION,
            });
        }
        if b.len() != header + 8 * (d + d * d) {
            return Err(Error::CorruptNiqeModel(format!("unexpected length {}", b.len())));
        }
        if u32_at(12) as usize != d {
            return Err(Error::CorruptNiqeModel("feature count is not 36".into()));
        }
        let f64_at = |o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        let vals: Vec<f64> = (0..d + d * d).map(|i| f64_at(header + 8 * i)).collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptNiqeModel("non-finite entries".into()));
        }
        let model = NiqeModel {
            patch: u32_at(16) as usize,
            sharpness_quantile: f64_at(20),
            n_images: u64_at(28) as usize,
            n_patches: u64_at(36) as usize,
            mean: vals[..d].to_vec(),
            covariance: vals[d..].to_vec(),
        };
        check_patch(model.patch).map_err(|e| Error::CorruptNiqeModel(e.to_string()))?;
        for i in 0..d {
            for j in 0..i {
                let (a, c) = (model.covariance[i * d + j], model.covariance[j * d + i]);
                if (a - c).abs() > 1e-9 * (1.0 + a.abs()) {
                    return Err(Error::CorruptNiqeModel("covariance is not symmetric".into()));
                }
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let b = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{simulate_low_light, ExposureLevel, PhotonScale};
    use crate::synthetic::synthetic_scene;
    use rand_distr::{Distribution, Normal};

    fn corpus(n: usize, size: usize) -> Vec<Image> {
        (0..n).map(|i| synthetic_scene(size, size, 100 + i as u64).unwrap()).collect()
    }

    #[test]
    fn table_endpoints() {
        let t = shape_table();
        assert_eq!(t.len(), 9801);
        // Gaussian: Γ(1/2)Γ(3/2)/Γ(1)² = π/2.
        let r2 = t.iter().find(|(a, _)| (a - 2.0).abs() < 1e-9).unwrap().1;
        assert!((r2 - std::f64::consts::FRAC_PI_2).abs() < 1e-9);
    }

    #[test]
    fn ggd_recovers_gaussian_shape() {
        let mut rng = crate::rng::stream_rng(1, crate::rng::Stream::Synthetic, 0, 0);
        let n = Normal::new(0.0, 0.7).unwrap();
        let x: Vec<f64> = (0..200_000).map(|_| n.sample(&mut rng)).collect();
        let (a, v) = ggd_fit(&x);
        assert!((a - 2.0).abs() < 0.05, "{a}");
        assert!((v - 0.49).abs() < 0.01);
        let g = aggd_fit(&x);
        assert!((g[0] - 2.0).abs() < 0.05 && g[1].abs() < 0.01);
    }

    #[test]
    fn fit_is_deterministic_and_well_formed() {
        let imgs = corpus(10, 64);
        let a = fit_niqe_model_images(&imgs, 32, 0.75).unwrap();
        let b = fit_niqe_model_images(&imgs, 32, 0.75).unwrap();
        assert_eq!(a, b);
        let m = DMatrix::from_row_slice(36, 36, &a.covariance);
        assert_eq!(m, m.transpose());
        let eig = m.symmetric_eigenvalues();
        assert!(eig.iter().all(|&e| e >= -1e-9 * (1.0 + eig.amax())));
    }

    #[test]
    fn identical_corpus_still_fits() {
        let img = synthetic_scene(64, 64, 3).unwrap();
        let m = fit_niqe_model_images(&vec![img.clone(); 10], 32, 0.75).unwrap();
        assert!(niqe(&img, &m).unwrap().is_finite());
    }

    #[test]
    fn noise_scores_worse() {
        let imgs = corpus(10, 64);
        let model = fit_niqe_model_images(&imgs, 32, 0.75).unwrap();
        let e = ExposureLevel::new(1.0).unwrap();
        let s = PhotonScale::new(10.0).unwrap();
        let noisy = simulate_low_light(&imgs[0], e, s, 4).unwrap().clipped();
        assert!(niqe(&imgs[0], &model).unwrap() < niqe(&noisy, &model).unwrap());
    }

    #[test]
    fn too_few_images_or_too_small() {
        let imgs = corpus(9, 64);
        assert!(matches!(
            fit_niqe_model_images(&imgs, 32, 0.75),
            Err(Error::TooFewImages { .. })
        ));
        let tiny = corpus(10, 16);
        assert!(matches!(
            fit_niqe_model_images(&tiny, 32, 0.75),
            Err(Error::TooFewPatches { .. })
        ));
        let model = fit_niqe_model_images(&corpus(10, 64), 32, 0.75).unwrap();
        assert!(matches!(
            niqe(&Image::zeros(63, 64, 3), &model),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn model_file_roundtrip() {
        let model = fit_niqe_model_images(&corpus(10, 64), 32, 0.75).unwrap();
        let bytes = model.to_bytes();
        assert_eq!(NiqeModel::from_bytes(&bytes).unwrap(), model);
        assert!(matches!(
            NiqeModel::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::CorruptNiqeModel(_))
        ));
        let mut v = bytes.clone();
        v[8] = 7;
        assert!(matches!(NiqeModel::from_bytes(&v), Err(Error::VersionMismatch { .. })));
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 0.5), 2.5);
        assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 1.0), 4.0);
    }
}
