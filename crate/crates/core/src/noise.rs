//! Photon-counting degradation model.
//!
//! A pixel of normalized intensity `x` seen at exposure `e` collects
//! `k ~ Poisson(s·e·x)` photons, where `s` is the photon count of unit
//! intensity. The observed value is `k/s`, so it has mean `e·x` and variance
//! `e·x/s`: the noise is signal dependent and, relative to the signal, acts as
//! a multiplicative factor centered on one.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::imageio::Image;
use crate::rng::{stream_rng, Stream};

/// Expected photon count at unit intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonScale(f64);

impl PhotonScale {
    pub fn new(s: f64) -> Result<Self> {
        if s.is_finite() && s > 0.0 {
            Ok(PhotonScale(s))
        } else {
            Err(Error::InvalidArgument(format!("photon scale must be positive, got {s}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for PhotonScale {
    /// 8-bit codes read as photon counts.
    fn default() -> Self {
        PhotonScale(255.0)
    }
}

/// Multiplicative illumination attenuation in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ExposureLevel(f64);

impl ExposureLevel {
    pub fn new(e: f64) -> Result<Self> {
        if e > 0.0 && e <= 1.0 {
            Ok(ExposureLevel(e))
        } else {
            Err(Error::InvalidArgument(format!("exposure must lie in (0, 1], got {e}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Head of the default exposure ladder.
pub const LADDER_TOP: f64 = 0.30;
/// Ratio between consecutive ladder levels.
pub const LADDER_RATIO: f64 = 0.5;

/// Exposure levels `0.30·0.5^k` for `k = 0..n_levels`.
pub fn level_ladder(n_levels: usize) -> Vec<ExposureLevel> {
    (0..n_levels)
        .map(|k| ExposureLevel(LADDER_TOP * LADDER_RATIO.powi(k as i32)))
        .collect()
}

#[inline]
pub(crate) fn poisson_draw<R: Rng>(rng: &mut R, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    // Non-finite means propagate; beyond 1e15 the relative spread is < 1e-7.
    if !mean.is_finite() || mean > 1e15 {
        return mean;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng)
}

/// Degrade a clean image to exposure `e`. The result is not clipped, so its
/// first two moments are exactly those of the scaled Poisson variable.
pub fn simulate_low_light(x: &Image, e: ExposureLevel, s: PhotonScale, seed: u64) -> Result<Image> {
    let mut rng = stream_rng(seed, Stream::Simulate, 0, 0);
    simulate_low_light_with(x, e, s, &mut rng)
}

pub fn simulate_low_light_with<R: Rng>(
    x: &Image,
    e: ExposureLevel,
    s: PhotonScale,
    rng: &mut R,
) -> Result<Image> {
    if let Some(v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidArgument(format!(
            "clean image values must lie in [0, 1], found {v}"
        )));
    }
    let (s, e) = (s.get(), e.get());
    Ok(x.map_with(|v| poisson_draw(rng, s * e * v) / s))
}

/// Stochastic target of the noise branch: `k/(s·y + α)` with `k ~ Poisson(s·y)`.
/// With `s = 1` this is `Poisson(Y)/(Y + α)` taken literally.
pub fn noise_target(y: &Image, s: PhotonScale, alpha: f64, seed: u64) -> Result<Image> {
    let mut rng = stream_rng(seed, Stream::NoiseTarget, 0, 0);
    noise_target_with(y, s, alpha, &mut rng)
}

pub fn noise_target_with<R: Rng>(y: &Image, s: PhotonScale, alpha: f64, rng: &mut R) -> Result<Image> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    if let Some(v) = y.data().iter().find(|v| **v < 0.0) {
        return Err(Error::InvalidArgument(format!("negative intensity {v} in noise target input")));
    }
    let s = s.get();
    Ok(y.map_with(|v| {
        let mu = s * v;
        poisson_draw(rng, mu) / (mu + alpha)
    }))
}

/// Element-wise `y / (x + α)`: the realized multiplicative noise factor.
pub fn multiplicative_residual(y: &Image, x: &Image, alpha: f64) -> Result<Image> {
    y.ensure_same_shape(x, "multiplicative residual")?;
    if x.data().iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidArgument("reference image has negative entries".into()));
    }
    let data = y
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| a / (b + alpha))
        .collect();
    Image::new(y.height(), y.width(), y.channels(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(img: &Image) -> (f64, f64) {
        let n = img.data().len() as f64;
        let mean = img.mean();
        let var = img.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn zero_image_stays_zero() {
        let x = Image::zeros(8, 8, 3);
        let y = simulate_low_light(&x, ExposureLevel::new(0.3).unwrap(), PhotonScale::default(), 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    // Monte-Carlo oracle: 10^4 iid draws of Poisson(s·e·x)/s against the
    // closed-form mean e·x and variance e·x/s.
    #[test]
    fn simulated_moments_match_poisson() {
        for &(x, e, s) in &[(0.5, 1.0, 1000.0), (1.0, 0.1, 100.0)] {
            let img = Image::filled(100, 100, 1, x);
            let y = simulate_low_light(&img, ExposureLevel::new(e).unwrap(), PhotonScale::new(s).unwrap(), 42).unwrap();
            let (mean, var) = moments(&y);
            let expected_var = e * x / s;
            let se = (expected_var / 1e4).sqrt();
            assert!((mean - e * x).abs() <= 3.0 * se, "mean {mean} vs {}", e * x);
            assert!((var / expected_var - 1.0).abs() <= 0.1, "var {var} vs {expected_var}");
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let x = Image::from_fn(6, 6, 3, |c, y, x| ((c + y + x) % 5) as f64 / 4.0);
        let e = ExposureLevel::new(0.15).unwrap();
        let a = simulate_low_light(&x, e, PhotonScale::default(), 9).unwrap();
        let b = simulate_low_light(&x, e, PhotonScale::default(), 9).unwrap();
        let c = simulate_low_light(&x, e, PhotonScale::default(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn lower_exposure_darkens() {
        let x = Image::filled(64, 64, 1, 0.8);
        let s = PhotonScale::default();
        let bright = simulate_low_light(&x, ExposureLevel::new(0.3).unwrap(), s, 3).unwrap().mean();
        let dark = simulate_low_light(&x, ExposureLevel::new(0.075).unwrap(), s, 3).unwrap().mean();
        assert!(dark < bright);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(PhotonScale::new(0.0).is_err());
        assert!(PhotonScale::new(-3.0).is_err());
        assert!(ExposureLevel::new(0.0).is_err());
        assert!(ExposureLevel::new(1.5).is_err());
        assert!(ExposureLevel::new(1.0).is_ok());
        let y = Image::filled(2, 2, 1, -0.1);
        assert!(noise_target(&y, PhotonScale::default(), 1e-6, 0).is_err());
    }

    #[test]
    fn noise_target_zero_pixel_is_zero() {
        let y = Image::zeros(4, 4, 3);
        let t = noise_target(&y, PhotonScale::default(), 1e-6, 5).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    // Poisson(μ)/μ has mean 1 and variance 1/μ; μ = 255·0.5.
    #[test]
    fn noise_target_moments() {
        let y = Image::filled(250, 400, 1, 0.5);
        let s = PhotonScale::new(255.0).unwrap();
        let t = noise_target(&y, s, 1e-6, 77).unwrap();
        let (mean, var) = moments(&t);
        let mu: f64 = 255.0 * 0.5;
        let sigma = (1.0 / mu / 1e5).sqrt();
        assert!((mean - 1.0).abs() <= 3.0 * sigma, "mean {mean}");
        assert!((var * mu - 1.0).abs() <= 0.1, "var {var}");
        assert!(t.data().iter().all(|v| *v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn residual_of_identical_images_is_one() {
        let x = Image::from_fn(5, 5, 3, |c, y, x| 0.1 + 0.03 * (c + y + x) as f64);
        let r = multiplicative_residual(&x, &x, 1e-6).unwrap();
        for (v, xv) in r.data().iter().zip(x.data()) {
            assert!((v - 1.0).abs() <= 1e-6 / xv);
        }
    }

    #[test]
    fn residual_of_doubled_image_is_two() {
        let x = Image::filled(3, 3, 3, 0.25);
        let y = x.map(|v| 2.0 * v);
        let r = multiplicative_residual(&y, &x, 1e-6).unwrap();
        assert!(r.data().iter().all(|v| (v - 2.0).abs() < 1e-4));
        assert!(multiplicative_residual(&y, &Image::zeros(3, 4, 3), 1e-6).is_err());
    }

    #[test]
    fn residual_mean_tends_to_one_with_photon_scale() {
        let x = Image::filled(64, 64, 3, 0.4);
        let e = ExposureLevel::new(1.0).unwrap();
        let mut errs = Vec::new();
        for s in [10.0, 100.0, 10_000.0] {
            let y = simulate_low_light(&x, e, PhotonScale::new(s).unwrap(), 8).unwrap();
            let r = multiplicative_residual(&y, &x, 1e-6).unwrap();
            let spread = r.data().iter().map(|v| (v - 1.0).abs()).sum::<f64>() / r.data().len() as f64;
            errs.push(((r.mean() - 1.0).abs(), spread));
        }
        assert!(errs[2].0 < 0.01);
        assert!(errs[0].1 > errs[1].1 && errs[1].1 > errs[2].1);
    }

    #[test]
    fn ladder_halves_from_head() {
        assert_eq!(level_ladder(1), vec![ExposureLevel(0.30)]);
        let four: Vec<f64> = level_ladder(4).into_iter().map(ExposureLevel::get).collect();
        assert_eq!(four, vec![0.30, 0.15, 0.075, 0.0375]);
        for w in four.windows(2) {
            assert_eq!(w[1], w[0] / 2.0);
        }
        assert!(level_ladder(12).iter().all(|e| e.get() > 0.0 && e.get() <= 1.0));
    }
}
