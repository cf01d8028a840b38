//! Procedural clean scenes and their simulated low-light pairs.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imageio::{save_image, Image, PairedSample};
use crate::noise::{simulate_low_light, ExposureLevel, PhotonScale};
use crate::rng::{stream_rng, stream_seed, Stream};

fn muted_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let gray: f64 = rng.random_range(0.25..0.8);
    let mut c = [0.0; 3];
    for v in &mut c {
        *v = (gray + rng.random_range(-0.18..0.18)).clamp(0.05, 0.95);
    }
    c
}

/// Bilinear value noise on a lattice with `cells` cells per side.
fn value_noise(h: usize, w: usize, cells: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = cells + 1;
    let lattice: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let fy = y as f64 / h as f64 * cells as f64;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..w {
            let fx = x as f64 / w as f64 * cells as f64;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let at = |yy: usize, xx: usize| lattice[yy.min(cells) * n + xx.min(cells)];
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
            let bottom = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
            out[y * w + x] = top * (1.0 - ty) + bottom * ty;
        }
    }
    out
}

/// A clean RGB scene: shaded background, a few flat shapes with muted
/// colors, and multi-octave texture. Values stay inside `[0.02, 0.98]`.
pub fn synthetic_scene(height: usize, width: usize, seed: u64) -> Result<Image> {
    if height == 0 || width == 0 {
        return Err(Error::EmptyImage);
    }
    let mut rng = stream_rng(seed, Stream::Synthetic, 0, 0);
    let (h, w) = (height as f64, width as f64);

    let bg0 = muted_color(&mut rng);
    let bg1 = muted_color(&mut rng);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut img = Image::from_fn(height, width, 3, |c, y, x| {
        let t = 0.5 + 0.5 * ((x as f64 / w - 0.5) * ca + (y as f64 / h - 0.5) * sa);
        bg0[c] * (1.0 - t) + bg1[c] * t
    });

    let shapes = rng.random_range(3..7);
    for _ in 0..shapes {
        let color = muted_color(&mut rng);
        let cy = rng.random_range(0.0..h);
        let cx = rng.random_range(0.0..w);
        let ry = rng.random_range(0.08..0.3) * h;
        let rx = rng.random_range(0.08..0.3) * w;
        let disc = rng.random_bool(0.5);
        for y in 0..height {
            for x in 0..width {
                let dy = (y as f64 - cy) / ry;
                let dx = (x as f64 - cx) / rx;
                let inside = if disc { dy * dy + dx * dx <= 1.0 } else { dy.abs() <= 1.0 && dx.abs() <= 1.0 };
                if inside {
                    for (c, v) in color.iter().enumerate() {
                        img.set(c, y, x, *v);
                    }
                }
            }
        }
    }

    let mut texture = vec![0.0; height * width];
    let mut amp = 0.08;
    for octave in 0..4 {
        let layer = value_noise(height, width, 2 << octave, &mut rng);
        texture.iter_mut().zip(layer).for_each(|(t, v)| *t += amp * v);
        amp *= 0.5;
    }
    for c in 0..3 {
        for (v, t) in img.plane_mut(c).iter_mut().zip(&texture) {
            *v = (*v * (1.0 + t)).clamp(0.02, 0.98);
        }
    }
    Ok(img)
}

/// `n` clean scenes with their simulated low-light counterparts, ids
/// `scene000`, `scene001`, ...
pub fn synthetic_pairs(
    n: usize,
    size: usize,
    e: ExposureLevel,
    s: PhotonScale,
    seed: u64,
) -> Result<Vec<PairedSample>> {
    (0..n)
        .map(|i| {
            let high = synthetic_scene(size, size, stream_seed(seed, Stream::Synthetic, i as u64, 0))?;
            let low = simulate_low_light(&high, e, s, stream_seed(seed, Stream::Simulate, i as u64, 0))?;
            PairedSample::new(format!("scene{i:03}"), low, high)
        })
        .collect()
}

/// Write pairs as 8-bit PNGs under `root/low` and `root/high`.
pub fn write_paired_dataset(root: &Path, pairs: &[PairedSample]) -> Result<()> {
    for sub in ["low", "high"] {
        let d = root.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for p in pairs {
        save_image(&p.low.clipped(), root.join("low").join(format!("{}.png", p.id)))?;
        save_image(&p.high, root.join("high").join(format!("{}.png", p.id)))?;
    }
    Ok(())
}
