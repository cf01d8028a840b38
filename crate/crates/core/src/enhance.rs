//! Inference: enhanced image `clip(R∘L)` plus exportable decomposition maps.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imageio::{save_image, Image};
use crate::model::{forward_one, DecompositionTriple, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct EnhancementResult {
    /// `clip(R∘L, 0, 1)`, three channels.
    pub enhanced: Image,
    pub triple: DecompositionTriple,
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Mirror-pad the bottom and right edges up to the next multiple of `k`
/// (edge pixel not repeated).
pub fn reflect_pad(img: &Image, k: usize) -> Image {
    let (h, w, c) = img.dims();
    let (ph, pw) = (h.div_ceil(k) * k, w.div_ceil(k) * k);
    if (ph, pw) == (h, w) {
        return img.clone();
    }
    Image::from_fn(ph, pw, c, |ch, y, x| img.get(ch, reflect(y, h), reflect(x, w)))
}

fn crop_to(img: Image, h: usize, w: usize) -> Result<Image> {
    if img.height() == h && img.width() == w {
        Ok(img)
    } else {
        img.crop(0, 0, h, w)
    }
}

/// Run the model on a low-light image of any size.
pub fn enhance(params: &ModelParams, y: &Image) -> Result<EnhancementResult> {
    if y.channels() != 3 {
        return Err(Error::ChannelCount {
            expected: 3,
            actual: y.channels(),
        });
    }
    let (h, w, _) = y.dims();
    let t = forward_one(params, &reflect_pad(y, 8))?;
    let triple = DecompositionTriple {
        illumination: crop_to(t.illumination, h, w)?,
        reflectance: crop_to(t.reflectance, h, w)?,
        noise: crop_to(t.noise, h, w)?,
    };
    let enhanced = triple.retinex_product().clipped();
    Ok(EnhancementResult { enhanced, triple })
}

/// Enhance and write `L.png`, `R.png`, `N.png` (shown as `(N+1)/2`) and
/// `enhanced.png` into `out_dir`.
pub fn decompose_to_files(params: &ModelParams, y: &Image, out_dir: &Path) -> Result<EnhancementResult> {
    let res = enhance(params, y)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    save_image(&res.triple.illumination, out_dir.join("L.png"))?;
    save_image(&res.triple.reflectance, out_dir.join("R.png"))?;
    save_image(&noise_visualization(&res.triple.noise), out_dir.join("N.png"))?;
    save_image(&res.enhanced, out_dir.join("enhanced.png"))?;
    Ok(res)
}

pub fn noise_visualization(n: &Image) -> Image {
    n.map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::{load_image, quantize};
    use crate::model::init_model;

    fn ramp(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, 3, |c, y, x| ((y * 7 + x * 3 + c) % 11) as f64 / 10.0)
    }

    #[test]
    fn zero_heads_give_quarter() {
        let mut p = init_model(1, 8).unwrap();
        p.zero_heads();
        let r = enhance(&p, &ramp(16, 24)).unwrap();
        assert!(r.enhanced.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn odd_sizes_roundtrip_shape() {
        let p = init_model(2, 8).unwrap();
        let r = enhance(&p, &ramp(13, 21)).unwrap();
        assert_eq!(r.enhanced.dims(), (13, 21, 3));
        assert_eq!(r.triple.illumination.dims(), (13, 21, 1));
        assert!(r.enhanced.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn padding_is_identity_for_multiples_of_eight() {
        let img = ramp(16, 8);
        assert_eq!(reflect_pad(&img, 8), img);
        let p = init_model(3, 8).unwrap();
        let direct = forward_one(&p, &img).unwrap();
        assert_eq!(enhance(&p, &img).unwrap().triple, direct);
    }

    #[test]
    fn reflect_indices() {
        let v: Vec<usize> = (0..8).map(|i| reflect(i, 3)).collect();
        assert_eq!(v, [0, 1, 2, 1, 0, 1, 2, 1]);
        assert_eq!(reflect(5, 1), 0);
    }

    #[test]
    fn grayscale_input_rejected() {
        let p = init_model(1, 8).unwrap();
        assert!(matches!(
            enhance(&p, &Image::zeros(8, 8, 1)),
            Err(Error::ChannelCount { .. })
        ));
    }

    #[test]
    fn written_maps_recompose() {
        let dir = tempfile::tempdir().unwrap();
        let p = init_model(5, 8).unwrap();
        decompose_to_files(&p, &ramp(16, 16), dir.path()).unwrap();
        let l = load_image(dir.path().join("L.png")).unwrap();
        let r = load_image(dir.path().join("R.png")).unwrap();
        let e = load_image(dir.path().join("enhanced.png")).unwrap();
        assert_eq!(l.channels(), 1);
        let tri = DecompositionTriple {
            illumination: l,
            reflectance: r.clone(),
            noise: r,
        };
        let recomposed = tri.retinex_product().clipped();
        for (a, b) in recomposed.data().iter().zip(e.data()) {
            let (qa, qb) = (quantize(*a) as i32, quantize(*b) as i32);
            assert!((qa - qb).abs() <= 1, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_noise_is_mid_gray() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = init_model(5, 8).unwrap();
        p.zero_heads();
        decompose_to_files(&p, &ramp(8, 8), dir.path()).unwrap();
        let n = image::open(dir.path().join("N.png")).unwrap().to_rgb8();
        assert!(n.pixels().all(|px| px.0 == [128, 128, 128]));
    }
}
