//! PSNR and SSIM.

use crate::error::{Error, Result};
use crate::imageio::Image;

/// `10·log10(peak²/MSE)`; `f64::INFINITY` when the images are identical.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    a.ensure_same_shape(b, "psnr")?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps.
pub(crate) fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable filtering over the valid region only.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM with a peak of 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_with_peak(a, b, 1.0)
}

/// Mean local SSIM, 11×11 Gaussian window (σ = 1.5), valid region.
/// Color images are scored on their luma.
pub fn ssim_with_peak(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    a.ensure_same_shape(b, "ssim")?;
    let (h, w, _) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            min: SSIM_WINDOW,
        });
    }
    let (la, lb) = (a.luma(), b.luma());
    let (x, y) = (la.data(), lb.data());
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |f: &dyn Fn(usize) -> f64| (0..h * w).map(f).collect::<Vec<f64>>();
    let (mx, oh, ow) = filter_valid(x, h, w, &k);
    let (my, ..) = filter_valid(y, h, w, &k);
    let (sxx, ..) = filter_valid(&prod(&|i| x[i] * x[i]), h, w, &k);
    let (syy, ..) = filter_valid(&prod(&|i| y[i] * y[i]), h, w, &k);
    let (sxy, ..) = filter_valid(&prod(&|i| x[i] * y[i]), h, w, &k);
    let c1 = (K1 * peak).powi(2);
    let c2 = (K2 * peak).powi(2);
    let total: f64 = (0..oh * ow)
        .map(|i| {
            let (mux, muy) = (mx[i], my[i]);
            let vx = sxx[i] - mux * mux;
            let vy = syy[i] - muy * muy;
            let cov = sxy[i] - mux * muy;
            ((2.0 * mux * muy + c1) * (2.0 * cov + c2)) / ((mux * mux + muy * muy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / (oh * ow) as f64)
}
