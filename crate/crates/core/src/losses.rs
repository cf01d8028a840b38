//! Composite training objective.
//!
//! ```text
//! total = rec + λ₁·(γ·decom + (1−γ)·sps) + λ₂·noise
//! rec   = mean |Y − R∘L∘N|
//! decom = mean |X − R∘L|
//! sps   = mean |∇L| · exp(−β·mean_c|∇R_c|)      over x and y directions
//! noise = mean |N − T|,  T = Poisson(s·Y)/(s·Y + α)
//! ```
//!
//! All norms are element means, so the weights do not depend on resolution.
//! `L` is broadcast over the three color channels wherever it multiplies `R`.

use crate::error::{Error, Result};
use crate::imageio::Image;
use crate::model::{DecompositionTriple, TripleGrad};

/// Hyperparameters of the composite objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.5,
            lambda2: 0.1,
            gamma: 0.6,
            beta: 10.0,
            alpha: 1e-6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.lambda1, self.lambda2, self.gamma, self.beta, self.alpha]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("loss weights must be finite".into()));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Config("lambda1 and lambda2 must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if self.alpha <= 0.0 {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }

    /// Combine constituents into the total.
    pub fn combine(&self, rec: f64, decom: f64, sps: f64, noise: f64) -> f64 {
        rec + self.lambda1 * (self.gamma * decom + (1.0 - self.gamma) * sps) + self.lambda2 * noise
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub rec: f64,
    pub decom: f64,
    pub sps: f64,
    pub noise: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// First non-finite constituent, if any.
    pub fn non_finite(&self) -> Option<(&'static str, f64)> {
        [
            ("rec", self.rec),
            ("decom", self.decom),
            ("sps", self.sps),
            ("noise", self.noise),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
    }

    /// Element-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut acc = LossBreakdown::default();
        for b in items {
            acc.rec += b.rec;
            acc.decom += b.decom;
            acc.sps += b.sps;
            acc.noise += b.noise;
            acc.total += b.total;
        }
        LossBreakdown {
            rec: acc.rec / n,
            decom: acc.decom / n,
            sps: acc.sps / n,
            noise: acc.noise / n,
            total: acc.total / n,
        }
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Forward differences along x and y. The last column of the x map and the
/// last row of the y map are zero.
pub fn grad_xy(map: &Image) -> Result<(Image, Image)> {
    let (h, w, c) = map.dims();
    if h < 2 || w < 2 {
        return Err(Error::InvalidArgument(format!(
            "gradient needs at least 2x2 pixels, got {h}x{w}"
        )));
    }
    let mut gx = Image::zeros(h, w, c);
    let mut gy = Image::zeros(h, w, c);
    for ch in 0..c {
        let src = map.plane(ch);
        let dx = gx.plane_mut(ch);
        for y in 0..h {
            for x in 0..w - 1 {
                dx[y * w + x] = src[y * w + x + 1] - src[y * w + x];
            }
        }
        let dy = gy.plane_mut(ch);
        for y in 0..h - 1 {
            for x in 0..w {
                dy[y * w + x] = src[(y + 1) * w + x] - src[y * w + x];
            }
        }
    }
    Ok((gx, gy))
}

fn check_observation(img: &Image, t: &DecompositionTriple, context: &'static str) -> Result<()> {
    t.check()?;
    let (h, w) = t.dims();
    if img.dims() != (h, w, 3) {
        return Err(Error::shape(context, format!("({h}, {w}, 3)"), format!("{:?}", img.dims())));
    }
    Ok(())
}

/// `mean |Y − R∘L∘N|`
pub fn loss_rec(y: &Image, t: &DecompositionTriple) -> Result<f64> {
    check_observation(y, t, "reconstruction loss")?;
    let l = t.illumination.plane(0);
    let mut acc = 0.0;
    for c in 0..3 {
        for (((yv, r), n), lv) in y.plane(c).iter().zip(t.reflectance.plane(c)).zip(t.noise.plane(c)).zip(l) {
            acc += (yv - r * lv * n).abs();
        }
    }
    Ok(acc / y.data().len() as f64)
}

/// `mean |X − R∘L|`
pub fn loss_decom(x: &Image, t: &DecompositionTriple) -> Result<f64> {
    check_observation(x, t, "decomposition loss")?;
    let l = t.illumination.plane(0);
    let mut acc = 0.0;
    for c in 0..3 {
        for ((xv, r), lv) in x.plane(c).iter().zip(t.reflectance.plane(c)).zip(l) {
            acc += (xv - r * lv).abs();
        }
    }
    Ok(acc / x.data().len() as f64)
}

/// Channel mean of `|∇R|` for one direction.
fn reflectance_edge_strength(grad: &Image) -> Vec<f64> {
    let n = grad.pixels();
    let channels = grad.channels() as f64;
    (0..n)
        .map(|i| (0..grad.channels()).map(|c| grad.plane(c)[i].abs()).sum::<f64>() / channels)
        .collect()
}

/// Structure-preserving smoothness: illumination gradients, attenuated where
/// the reflectance has edges.
pub fn loss_sps(t: &DecompositionTriple, beta: f64) -> Result<f64> {
    t.check()?;
    let (lx, ly) = grad_xy(&t.illumination)?;
    let (rx, ry) = grad_xy(&t.reflectance)?;
    let mut acc = 0.0;
    for (lg, rg) in [(&lx, &rx), (&ly, &ry)] {
        let strength = reflectance_edge_strength(rg);
        for (a, m) in lg.plane(0).iter().zip(&strength) {
            acc += a.abs() * (-beta * m).exp();
        }
    }
    Ok(acc / (2 * t.illumination.pixels()) as f64)
}

/// `mean |N − T|`
pub fn loss_noise(n: &Image, target: &Image) -> Result<f64> {
    n.ensure_same_shape(target, "noise loss")?;
    let acc: f64 = n.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(acc / n.data().len() as f64)
}

/// Evaluate every constituent and the weighted total.
pub fn total_loss(
    y: &Image,
    x: &Image,
    t: &DecompositionTriple,
    noise_target: &Image,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    let rec = loss_rec(y, t)?;
    let decom = loss_decom(x, t)?;
    let sps = loss_sps(t, w.beta)?;
    let noise = loss_noise(&t.noise, noise_target)?;
    Ok(LossBreakdown {
        rec,
        decom,
        sps,
        noise,
        total: w.combine(rec, decom, sps, noise),
    })
}

/// [`total_loss`] together with its (sub)gradient with respect to `L`, `R`
/// and `N`. `sign(0)` is taken as 0.
pub fn total_loss_with_grad(
    y: &Image,
    x: &Image,
    t: &DecompositionTriple,
    noise_target: &Image,
    w: &LossWeights,
) -> Result<(LossBreakdown, TripleGrad)> {
    let breakdown = total_loss(y, x, t, noise_target, w)?;
    let (h, wd) = t.dims();
    let px = h * wd;
    let l = t.illumination.plane(0);
    let mut dl = vec![0.0; px];
    let mut dr = vec![0.0; 3 * px];
    let mut dn = vec![0.0; 3 * px];

    let elem = 1.0 / (3 * px) as f64;
    let decom_w = w.lambda1 * w.gamma * elem;
    let noise_w = w.lambda2 * elem;
    for c in 0..3 {
        let (yp, xp) = (y.plane(c), x.plane(c));
        let (rp, np, tp) = (t.reflectance.plane(c), t.noise.plane(c), noise_target.plane(c));
        for i in 0..px {
            let off = c * px + i;
            let (r, n, lv) = (rp[i], np[i], l[i]);
            let g_rec = elem * sign(r * lv * n - yp[i]);
            dr[off] += g_rec * lv * n;
            dn[off] += g_rec * r * lv;
            dl[i] += g_rec * r * n;

            let g_dec = decom_w * sign(r * lv - xp[i]);
            dr[off] += g_dec * lv;
            dl[i] += g_dec * r;

            dn[off] += noise_w * sign(n - tp[i]);
        }
    }

    let sps_w = w.lambda1 * (1.0 - w.gamma) / (2 * px) as f64;
    if sps_w != 0.0 {
        let (lx, ly) = grad_xy(&t.illumination)?;
        let (rx, ry) = grad_xy(&t.reflectance)?;
        for (step, lg, rg) in [(1usize, &lx, &rx), (wd, &ly, &ry)] {
            let strength = reflectance_edge_strength(rg);
            let lgp = lg.plane(0);
            for i in 0..px {
                let valid = if step == 1 { i % wd != wd - 1 } else { i / wd != h - 1 };
                if !valid {
                    continue;
                }
                let e = (-w.beta * strength[i]).exp();
                let a = lgp[i];
                let g_a = sps_w * sign(a) * e;
                dl[i + step] += g_a;
                dl[i] -= g_a;
                let g_m = -sps_w * w.beta * a.abs() * e / 3.0;
                if g_m == 0.0 {
                    continue;
                }
                for c in 0..3 {
                    let g = g_m * sign(rg.plane(c)[i]);
                    dr[c * px + i + step] += g;
                    dr[c * px + i] -= g;
                }
            }
        }
    }

    Ok((
        breakdown,
        TripleGrad {
            illumination: dl,
            reflectance: dr,
            noise: dn,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    fn triple(l: Image, r: Image, n: Image) -> DecompositionTriple {
        DecompositionTriple {
            illumination: l,
            reflectance: r,
            noise: n,
        }
    }

    fn random_triple(h: usize, w: usize, seed: u64) -> DecompositionTriple {
        let mut rng = stream_rng(seed, Stream::Synthetic, 3, 0);
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let l = Image::from_fn(h, w, 1, |_, _, _| u(0.0, 1.0));
        let r = Image::from_fn(h, w, 3, |_, _, _| u(0.0, 1.0));
        let n = Image::from_fn(h, w, 3, |_, _, _| u(-1.0, 1.0));
        triple(l, r, n)
    }

    #[test]
    fn constant_map_has_zero_gradient() {
        let (gx, gy) = grad_xy(&Image::filled(4, 5, 3, 0.7)).unwrap();
        assert!(gx.data().iter().chain(gy.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_gradient() {
        let w = 8;
        let ramp = Image::from_fn(5, w, 1, |_, _, x| x as f64 / w as f64);
        let (gx, gy) = grad_xy(&ramp).unwrap();
        for y in 0..5 {
            for x in 0..w {
                let expect = if x == w - 1 { 0.0 } else { 1.0 / w as f64 };
                assert!((gx.get(0, y, x) - expect).abs() < 1e-15);
            }
        }
        assert!(gy.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_3x3_gradient() {
        let vals = [0.2, 0.9, 0.4, 0.1, 0.5, 0.3, 0.8, 0.6, 0.7];
        let m = Image::new(3, 3, 1, vals.to_vec()).unwrap();
        let (gx, gy) = grad_xy(&m).unwrap();
        let want_x = [0.7, -0.5, 0.0, 0.4, -0.2, 0.0, -0.2, 0.1, 0.0];
        let want_y = [-0.1, -0.4, -0.1, 0.7, 0.1, 0.4, 0.0, 0.0, 0.0];
        for i in 0..9 {
            assert!((gx.data()[i] - want_x[i]).abs() < 1e-12);
            assert!((gy.data()[i] - want_y[i]).abs() < 1e-12);
        }
        assert!(grad_xy(&Image::zeros(1, 4, 1)).is_err());
    }

    #[test]
    fn constant_fixtures() {
        let t = triple(Image::filled(2, 2, 1, 1.0), Image::filled(2, 2, 3, 1.0), Image::filled(2, 2, 3, 1.0));
        assert_eq!(loss_rec(&Image::filled(2, 2, 3, 0.5), &t).unwrap(), 0.5);
        let t = triple(Image::filled(2, 2, 1, 1.0), Image::filled(2, 2, 3, 0.5), Image::filled(2, 2, 3, 0.0));
        assert_eq!(loss_decom(&Image::filled(2, 2, 3, 1.0), &t).unwrap(), 0.5);
        assert_eq!(loss_noise(&Image::zeros(2, 2, 3), &Image::filled(2, 2, 3, 1.0)).unwrap(), 1.0);
    }

    #[test]
    fn sps_zero_for_constant_illumination() {
        let mut t = random_triple(4, 4, 1);
        t.illumination = Image::filled(4, 4, 1, 0.3);
        assert_eq!(loss_sps(&t, 10.0).unwrap(), 0.0);
    }

    #[test]
    fn sps_with_constant_reflectance_is_mean_gradient() {
        let (h, w) = (4, 6);
        let l = Image::from_fn(h, w, 1, |_, y, x| 0.1 * x as f64 + 0.05 * y as f64);
        let t = triple(l.clone(), Image::filled(h, w, 3, 0.4), Image::zeros(h, w, 3));
        let (gx, gy) = grad_xy(&l).unwrap();
        let expect = gx.data().iter().chain(gy.data()).map(|v| v.abs()).sum::<f64>() / (2 * h * w) as f64;
        assert!((loss_sps(&t, 10.0).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn sps_prefers_coincident_edges() {
        // L has a vertical edge between columns 0 and 1.
        let l = Image::from_fn(3, 3, 1, |_, _, x| if x == 0 { 0.2 } else { 0.8 });
        let r_same = Image::from_fn(3, 3, 3, |_, _, x| if x == 0 { 0.1 } else { 0.9 });
        let r_other = Image::from_fn(3, 3, 3, |_, y, _| if y == 0 { 0.1 } else { 0.9 });
        let n = Image::zeros(3, 3, 3);
        let coincide = loss_sps(&triple(l.clone(), r_same, n.clone()), 10.0).unwrap();
        let apart = loss_sps(&triple(l, r_other, n), 10.0).unwrap();
        // edge rows: 3 x-differences of 0.6; exp(-10·0.8) when aligned.
        assert!((coincide - 3.0 * 0.6 * (-8.0f64).exp() / 18.0).abs() < 1e-14);
        assert!((apart - 3.0 * 0.6 / 18.0).abs() < 1e-14);
        assert!(coincide < apart);
    }

    #[test]
    fn constituent_independence() {
        let base = random_triple(4, 4, 2);
        let other = random_triple(4, 4, 3);
        let mut swapped_n = base.clone();
        swapped_n.noise = other.noise.clone();
        let x = Image::filled(4, 4, 3, 0.6);
        assert_eq!(loss_decom(&x, &base).unwrap(), loss_decom(&x, &swapped_n).unwrap());
        assert_eq!(loss_sps(&base, 10.0).unwrap(), loss_sps(&swapped_n, 10.0).unwrap());
    }

    #[test]
    fn shape_errors() {
        let t = random_triple(4, 4, 4);
        assert!(loss_rec(&Image::zeros(4, 5, 3), &t).is_err());
        assert!(loss_decom(&Image::zeros(4, 4, 1), &t).is_err());
        assert!(loss_noise(&t.noise, &Image::zeros(4, 4, 1)).is_err());
        let mut bad = t.clone();
        bad.illumination = Image::zeros(4, 4, 3);
        assert!(loss_sps(&bad, 10.0).is_err());
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let w = LossWeights { gamma: 1.5, ..Default::default() };
        assert!(w.validate().is_err());
        let w = LossWeights { alpha: 0.0, ..Default::default() };
        assert!(w.validate().is_err());
        let w = LossWeights { lambda1: -1.0, ..Default::default() };
        assert!(w.validate().is_err());
    }

    #[test]
    fn zero_lambdas_leave_reconstruction_only() {
        let t = random_triple(4, 4, 5);
        let y = Image::filled(4, 4, 3, 0.2);
        let x = Image::filled(4, 4, 3, 0.7);
        let target = Image::filled(4, 4, 3, 1.0);
        let w = LossWeights { lambda1: 0.0, lambda2: 0.0, ..Default::default() };
        let b = total_loss(&y, &x, &t, &target, &w).unwrap();
        assert_eq!(b.total, b.rec);
    }

    fn field_mut(t: &mut DecompositionTriple, field: usize) -> &mut [f64] {
        match field {
            0 => t.illumination.data_mut(),
            1 => t.reflectance.data_mut(),
            _ => t.noise.data_mut(),
        }
    }

    // Analytic gradient against central differences of the total.
    #[test]
    fn map_gradient_matches_finite_differences() {
        let t = random_triple(4, 5, 6);
        let mut rng = stream_rng(6, Stream::Synthetic, 4, 0);
        let y = Image::from_fn(4, 5, 3, |_, _, _| rng.random_range(0.0..0.3));
        let x = Image::from_fn(4, 5, 3, |_, _, _| rng.random_range(0.0..1.0));
        let target = Image::from_fn(4, 5, 3, |_, _, _| rng.random_range(0.0..2.0));
        let w = LossWeights { beta: 2.0, ..Default::default() };
        let (_, g) = total_loss_with_grad(&y, &x, &t, &target, &w).unwrap();
        let f = |t: &DecompositionTriple| total_loss(&y, &x, t, &target, &w).unwrap().total;
        let h = 1e-7;
        for (field, grad) in [(0, &g.illumination), (1, &g.reflectance), (2, &g.noise)] {
            for i in 0..grad.len() {
                let (mut p, mut m) = (t.clone(), t.clone());
                field_mut(&mut p, field)[i] += h;
                field_mut(&mut m, field)[i] -= h;
                let fd = (f(&p) - f(&m)) / (2.0 * h);
                assert!((fd - grad[i]).abs() < 1e-6, "field {field} index {i}: fd {fd} vs {}", grad[i]);
            }
        }
    }
}
