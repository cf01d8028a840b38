//! Channel-histogram color divergence and two classical reference enhancers.

use crate::error::{Error, Result};
use crate::imageio::{quantize, Image};

pub const DEFAULT_BINS: usize = 64;

/// Normalized histogram of one channel over `[0, 1]`.
pub fn channel_histogram(plane: &[f64], bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    for &v in plane {
        let b = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        h[b] += 1.0;
    }
    let n = plane.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

/// Mean over the three channel pairs of the L1 distance between normalized
/// channel histograms. Zero iff all three histograms coincide.
pub fn color_divergence(img: &Image, bins: usize) -> Result<f64> {
    if img.channels() != 3 {
        return Err(Error::ChannelCount {
            expected: 3,
            actual: img.channels(),
        });
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be positive".into()));
    }
    let h: Vec<Vec<f64>> = (0..3).map(|c| channel_histogram(img.plane(c), bins)).collect();
    let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    Ok((l1(&h[0], &h[1]) + l1(&h[0], &h[2]) + l1(&h[1], &h[2])) / 3.0)
}

/// Per-channel power law `v^g`.
pub fn baseline_gamma(img: &Image, g: f64) -> Result<Image> {
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {g}")));
    }
    Ok(img.map(|v| v.clamp(0.0, 1.0).powf(g)))
}

/// Per-channel histogram equalization on 256 levels:
/// `(cdf(q) − cdf_min)/(n − cdf_min)`.
pub fn baseline_histeq(img: &Image) -> Image {
    let mut out = img.clone();
    for c in 0..img.channels() {
        let plane = out.plane_mut(c);
        let mut hist = [0usize; 256];
        for &v in plane.iter() {
            hist[quantize(v) as usize] += 1;
        }
        let mut cdf = [0usize; 256];
        let mut acc = 0;
        for (i, h) in hist.iter().enumerate() {
            acc += h;
            cdf[i] = acc;
        }
        let n = plane.len();
        let cdf_min = cdf.iter().copied().find(|&v| v > 0).unwrap_or(0);
        for v in plane.iter_mut() {
            *v = if n == cdf_min {
                v.clamp(0.0, 1.0)
            } else {
                (cdf[quantize(*v) as usize] - cdf_min) as f64 / (n - cdf_min) as f64
            };
        }
    }
    out
}
