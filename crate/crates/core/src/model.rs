//! Three-branch encoder-decoder that splits a low-light RGB image into
//! illumination `L` (1 channel), reflectance `R` (3 channels) and a
//! multiplicative noise map `N` (3 channels).
//!
//! Layout for base width `w` on an `H×W` input:
//!
//! ```text
//! stem   3 → w      3×3 s1          ReLU   H
//! enc1   w → 2w     3×3 s2          ReLU   H/2
//! enc2   2w → 4w    3×3 s2          ReLU   H/4
//! enc3   4w → 8w    3×3 s2          ReLU   H/8
//! dec3   up 8w → 4w, concat enc2, fuse 8w → 4w   ReLU   H/4
//! dec2   up 4w → 2w, concat enc1, fuse 4w → 2w   ReLU   H/2
//! dec1   up 2w → w,  concat stem, fuse 2w → w    ReLU   H
//! heads  1×1: w → 1 sigmoid (L), w → 3 sigmoid (R), w → 3 tanh (N)
//! ```

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imageio::Image;
use crate::nn::Layer;
use crate::rng::{stream_rng, Stream};

pub const DEFAULT_WIDTH: usize = 64;
pub const MIN_WIDTH: usize = 8;

/// Activation of the noise head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseActivation {
    /// `N ∈ [-1, 1]`.
    #[default]
    Tanh,
    /// `N ∈ (0, ∞)`.
    Softplus,
}

impl fmt::Display for NoiseActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseActivation::Tanh => "tanh",
            NoiseActivation::Softplus => "softplus",
        })
    }
}

impl FromStr for NoiseActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(NoiseActivation::Tanh),
            "softplus" => Ok(NoiseActivation::Softplus),
            other => Err(Error::Config(format!("unknown noise head activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        NamedTensor {
            name: name.into(),
            shape,
            data: vec![0.0; n],
        }
    }
}

// Layer order; tensor 2i is the weight of layer i and 2i+1 its bias.
const STEM: usize = 0;
const ENC1: usize = 1;
const ENC2: usize = 2;
const ENC3: usize = 3;
const UP3: usize = 4;
const FUSE3: usize = 5;
const UP2: usize = 6;
const FUSE2: usize = 7;
const UP1: usize = 8;
const FUSE1: usize = 9;
const HEAD_L: usize = 10;
const HEAD_R: usize = 11;
const HEAD_N: usize = 12;
const N_LAYERS: usize = 13;

pub(crate) fn architecture(width: usize) -> [(&'static str, Layer); N_LAYERS] {
    let w = width;
    [
        ("stem", Layer::conv(3, w, 3, 1)),
        ("enc1", Layer::conv(w, 2 * w, 3, 2)),
        ("enc2", Layer::conv(2 * w, 4 * w, 3, 2)),
        ("enc3", Layer::conv(4 * w, 8 * w, 3, 2)),
        ("dec3.up", Layer::up(8 * w, 4 * w)),
        ("dec3.fuse", Layer::conv(8 * w, 4 * w, 3, 1)),
        ("dec2.up", Layer::up(4 * w, 2 * w)),
        ("dec2.fuse", Layer::conv(4 * w, 2 * w, 3, 1)),
        ("dec1.up", Layer::up(2 * w, w)),
        ("dec1.fuse", Layer::conv(2 * w, w, 3, 1)),
        ("head.illumination", Layer::conv(w, 1, 1, 1)),
        ("head.reflectance", Layer::conv(w, 3, 1, 1)),
        ("head.noise", Layer::conv(w, 3, 1, 1)),
    ]
}

/// Expected `(name, shape)` of every parameter tensor for a given width.
pub fn parameter_layout(width: usize) -> Vec<(String, Vec<usize>)> {
    architecture(width)
        .iter()
        .flat_map(|(name, layer)| {
            [
                (format!("{name}.weight"), layer.weight_shape().to_vec()),
                (format!("{name}.bias"), vec![layer.out_c]),
            ]
        })
        .collect()
}

/// Learnable parameters of the decomposition network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    width: usize,
    seed: u64,
    noise_activation: NoiseActivation,
    tensors: Vec<NamedTensor>,
}

impl ModelParams {
    /// Wrap existing tensors after checking them against the architecture.
    pub fn from_tensors(
        width: usize,
        seed: u64,
        noise_activation: NoiseActivation,
        tensors: Vec<NamedTensor>,
    ) -> Result<Self> {
        if width < MIN_WIDTH {
            return Err(Error::InvalidArgument(format!("width must be at least {MIN_WIDTH}")));
        }
        let layout = parameter_layout(width);
        if layout.len() != tensors.len() {
            return Err(Error::shape("parameter count", layout.len(), tensors.len()));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if *name != t.name || *shape != t.shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::shape(
                    "parameter tensor",
                    format!("{name} {shape:?}"),
                    format!("{} {:?} ({} values)", t.name, t.shape, t.data.len()),
                ));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("non-finite value in {}", t.name)));
            }
        }
        Ok(ModelParams {
            width,
            seed,
            noise_activation,
            tensors,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn noise_activation(&self) -> NoiseActivation {
        self.noise_activation
    }

    pub fn set_noise_activation(&mut self, act: NoiseActivation) {
        self.noise_activation = act;
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.tensors
    }

    pub fn count_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Zero the three output heads, so that `L ≡ R ≡ 0.5` and `N ≡ 0`.
    pub fn zero_heads(&mut self) {
        for layer in [HEAD_L, HEAD_R, HEAD_N] {
            self.tensors[2 * layer].data.fill(0.0);
            self.tensors[2 * layer + 1].data.fill(0.0);
        }
    }

    fn weight(&self, layer: usize) -> &[f64] {
        &self.tensors[2 * layer].data
    }

    fn bias(&self, layer: usize) -> &[f64] {
        &self.tensors[2 * layer + 1].data
    }
}

/// Seeded initialization: uniform weights scaled by fan-in (He bound
/// `sqrt(6/fan_in)` for ReLU layers, `sqrt(3/fan_in)` for the heads), zero biases.
pub fn init_model(seed: u64, width: usize) -> Result<ModelParams> {
    if width < MIN_WIDTH {
        return Err(Error::InvalidArgument(format!(
            "width must be at least {MIN_WIDTH}, got {width}"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Init, width as u64, 0);
    let mut tensors = Vec::with_capacity(2 * N_LAYERS);
    for (i, (name, layer)) in architecture(width).iter().enumerate() {
        let gain = if i >= HEAD_L { 3.0 } else { 6.0 };
        let bound = (gain / layer.fan_in() as f64).sqrt();
        let mut weight = NamedTensor::zeros(format!("{name}.weight"), layer.weight_shape().to_vec());
        for v in weight.data.iter_mut() {
            *v = rng.random_range(-bound..bound);
        }
        tensors.push(weight);
        tensors.push(NamedTensor::zeros(format!("{name}.bias"), vec![layer.out_c]));
    }
    Ok(ModelParams {
        width,
        seed,
        noise_activation: NoiseActivation::Tanh,
        tensors,
    })
}

pub fn count_params(params: &ModelParams) -> usize {
    params.count_params()
}

/// Network outputs for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionTriple {
    /// `L`, one channel in `[0, 1]`.
    pub illumination: Image,
    /// `R`, three channels in `[0, 1]`.
    pub reflectance: Image,
    /// `N`, three channels in `[-1, 1]` (tanh head).
    pub noise: Image,
}

impl DecompositionTriple {
    pub fn dims(&self) -> (usize, usize) {
        (self.illumination.height(), self.illumination.width())
    }

    /// `R ∘ L` with `L` broadcast over the color channels.
    pub fn retinex_product(&self) -> Image {
        let l = self.illumination.plane(0);
        let (h, w, _) = self.reflectance.dims();
        let mut out = self.reflectance.clone();
        for c in 0..3 {
            for (v, lv) in out.plane_mut(c).iter_mut().zip(l) {
                *v *= lv;
            }
        }
        debug_assert_eq!(out.dims(), (h, w, 3));
        out
    }

    pub(crate) fn check(&self) -> Result<()> {
        let (h, w) = self.dims();
        if self.illumination.channels() != 1 {
            return Err(Error::ChannelCount {
                expected: 1,
                actual: self.illumination.channels(),
            });
        }
        for m in [&self.reflectance, &self.noise] {
            if m.dims() != (h, w, 3) {
                return Err(Error::shape("decomposition", format!("({h}, {w}, 3)"), format!("{:?}", m.dims())));
            }
        }
        Ok(())
    }
}

/// Gradient of a scalar objective with respect to the three output maps.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleGrad {
    pub illumination: Vec<f64>,
    pub reflectance: Vec<f64>,
    pub noise: Vec<f64>,
}

/// Per-tensor parameter gradients, aligned with [`ModelParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub tensors: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        ParamGrads {
            tensors: params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &ParamGrads, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn norm(&self) -> f64 {
        self.tensors.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Activations retained for the backward pass.
pub(crate) struct ForwardCache {
    height: usize,
    width: usize,
    input: Vec<f64>,
    a0: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    a3: Vec<f64>,
    c3: Vec<f64>,
    b2: Vec<f64>,
    c2: Vec<f64>,
    b1: Vec<f64>,
    c1: Vec<f64>,
    b0: Vec<f64>,
    l: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
}

fn relu_inplace(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn relu_mask(grad: &mut [f64], out: &[f64]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

pub(crate) fn check_input(y: &Image) -> Result<()> {
    if y.channels() != 3 {
        return Err(Error::ChannelCount {
            expected: 3,
            actual: y.channels(),
        });
    }
    let (h, w) = (y.height(), y.width());
    if h % 8 != 0 || w % 8 != 0 {
        return Err(Error::SpatialSize { height: h, width: w });
    }
    Ok(())
}

pub(crate) fn forward_cached(params: &ModelParams, y: &Image) -> Result<(DecompositionTriple, ForwardCache)> {
    check_input(y)?;
    let arch = architecture(params.width);
    let (h, w) = (y.height(), y.width());
    let run = |i: usize, x: &[f64], hh: usize, ww: usize| arch[i].1.forward(params.weight(i), params.bias(i), x, hh, ww);

    let input = y.data().to_vec();
    let mut a0 = run(STEM, &input, h, w);
    relu_inplace(&mut a0);
    let mut a1 = run(ENC1, &a0, h, w);
    relu_inplace(&mut a1);
    let mut a2 = run(ENC2, &a1, h / 2, w / 2);
    relu_inplace(&mut a2);
    let mut a3 = run(ENC3, &a2, h / 4, w / 4);
    relu_inplace(&mut a3);

    let u3 = run(UP3, &a3, h / 8, w / 8);
    let c3 = concat(&u3, &a2);
    let mut b2 = run(FUSE3, &c3, h / 4, w / 4);
    relu_inplace(&mut b2);
    let u2 = run(UP2, &b2, h / 4, w / 4);
    let c2 = concat(&u2, &a1);
    let mut b1 = run(FUSE2, &c2, h / 2, w / 2);
    relu_inplace(&mut b1);
    let u1 = run(UP1, &b1, h / 2, w / 2);
    let c1 = concat(&u1, &a0);
    let mut b0 = run(FUSE1, &c1, h, w);
    relu_inplace(&mut b0);

    let l: Vec<f64> = run(HEAD_L, &b0, h, w).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = run(HEAD_R, &b0, h, w).into_iter().map(sigmoid).collect();
    let n: Vec<f64> = match params.noise_activation {
        NoiseActivation::Tanh => run(HEAD_N, &b0, h, w).into_iter().map(f64::tanh).collect(),
        NoiseActivation::Softplus => run(HEAD_N, &b0, h, w).into_iter().map(softplus).collect(),
    };

    let triple = DecompositionTriple {
        illumination: Image::from_raw(h, w, 1, l.clone()),
        reflectance: Image::from_raw(h, w, 3, r.clone()),
        noise: Image::from_raw(h, w, 3, n.clone()),
    };
    let cache = ForwardCache {
        height: h,
        width: w,
        input,
        a0,
        a1,
        a2,
        a3,
        c3,
        b2,
        c2,
        b1,
        c1,
        b0,
        l,
        r,
        n,
    };
    Ok((triple, cache))
}

/// Back-propagate output-map gradients to every parameter.
pub(crate) fn backward(params: &ModelParams, cache: &ForwardCache, grad: &TripleGrad) -> ParamGrads {
    let arch = architecture(params.width);
    let (h, w) = (cache.height, cache.width);
    let mut grads = ParamGrads::zeros_like(params);

    let mut back = |i: usize, x: &[f64], hh: usize, ww: usize, dout: &[f64], need: bool| {
        let (dw, rest) = grads.tensors[2 * i..2 * i + 2].split_at_mut(1);
        arch[i].1.backward(params.weight(i), x, hh, ww, dout, &mut dw[0], &mut rest[0], need)
    };

    let dl: Vec<f64> = grad
        .illumination
        .iter()
        .zip(&cache.l)
        .map(|(g, s)| g * s * (1.0 - s))
        .collect();
    let dr: Vec<f64> = grad
        .reflectance
        .iter()
        .zip(&cache.r)
        .map(|(g, s)| g * s * (1.0 - s))
        .collect();
    let dn: Vec<f64> = match params.noise_activation {
        NoiseActivation::Tanh => grad.noise.iter().zip(&cache.n).map(|(g, t)| g * (1.0 - t * t)).collect(),
        // d softplus(x)/dx = sigmoid(x) = 1 - exp(-softplus(x))
        NoiseActivation::Softplus => grad
            .noise
            .iter()
            .zip(&cache.n)
            .map(|(g, s)| g * -(-s).exp_m1())
            .collect(),
    };

    let mut db0 = back(HEAD_L, &cache.b0, h, w, &dl, true).unwrap();
    for (i, d) in [(HEAD_R, &dr), (HEAD_N, &dn)] {
        let part = back(i, &cache.b0, h, w, d, true).unwrap();
        db0.iter_mut().zip(part).for_each(|(a, b)| *a += b);
    }
    relu_mask(&mut db0, &cache.b0);

    let width = params.width;
    let split = |d: Vec<f64>, up_channels: usize, pixels: usize| {
        let mut d = d;
        let skip = d.split_off(up_channels * pixels);
        (d, skip)
    };

    // dec1
    let dc1 = back(FUSE1, &cache.c1, h, w, &db0, true).unwrap();
    let (du1, da0_skip) = split(dc1, width, h * w);
    let mut db1 = back(UP1, &cache.b1, h / 2, w / 2, &du1, true).unwrap();
    relu_mask(&mut db1, &cache.b1);

    // dec2
    let dc2 = back(FUSE2, &cache.c2, h / 2, w / 2, &db1, true).unwrap();
    let (du2, da1_skip) = split(dc2, 2 * width, h * w / 4);
    let mut db2 = back(UP2, &cache.b2, h / 4, w / 4, &du2, true).unwrap();
    relu_mask(&mut db2, &cache.b2);

    // dec3
    let dc3 = back(FUSE3, &cache.c3, h / 4, w / 4, &db2, true).unwrap();
    let (du3, da2_skip) = split(dc3, 4 * width, h * w / 16);
    let mut da3 = back(UP3, &cache.a3, h / 8, w / 8, &du3, true).unwrap();
    relu_mask(&mut da3, &cache.a3);

    // encoder
    let mut da2 = back(ENC3, &cache.a2, h / 4, w / 4, &da3, true).unwrap();
    da2.iter_mut().zip(da2_skip).for_each(|(a, b)| *a += b);
    relu_mask(&mut da2, &cache.a2);
    let mut da1 = back(ENC2, &cache.a1, h / 2, w / 2, &da2, true).unwrap();
    da1.iter_mut().zip(da1_skip).for_each(|(a, b)| *a += b);
    relu_mask(&mut da1, &cache.a1);
    let mut da0 = back(ENC1, &cache.a0, h, w, &da1, true).unwrap();
    da0.iter_mut().zip(da0_skip).for_each(|(a, b)| *a += b);
    relu_mask(&mut da0, &cache.a0);
    back(STEM, &cache.input, h, w, &da0, false);

    grads
}

/// Decompose a single image. Height and width must be multiples of 8.
pub fn forward_one(params: &ModelParams, y: &Image) -> Result<DecompositionTriple> {
    forward_cached(params, y).map(|(t, _)| t)
}

/// Decompose a batch; items are processed independently.
pub fn forward(params: &ModelParams, batch: &[Image]) -> Result<Vec<DecompositionTriple>> {
    batch.par_iter().map(|y| forward_one(params, y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = stream_rng(seed, Stream::Synthetic, 0, 0);
        Image::from_fn(h, w, 3, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(init_model(5, 8).unwrap(), init_model(5, 8).unwrap());
        assert_ne!(init_model(5, 8).unwrap(), init_model(6, 8).unwrap());
        assert!(init_model(1, 4).is_err());
    }

    #[test]
    fn stem_is_three_to_width() {
        let p = init_model(0, 64).unwrap();
        assert_eq!(p.tensors()[0].name, "stem.weight");
        assert_eq!(p.tensors()[0].shape, vec![64, 3, 3, 3]);
        assert_eq!(p.tensors()[1].shape, vec![64]);
        assert!(p.tensors().iter().filter(|t| t.name.ends_with(".bias")).all(|t| t.data.iter().all(|&v| v == 0.0)));
    }

    // Shapes enumerated by hand for width 8.
    #[test]
    fn parameter_count_width_8() {
        let shapes: [(usize, usize); 13] = [
            (8 * 3 * 9, 8),      // stem
            (16 * 8 * 9, 16),    // enc1
            (32 * 16 * 9, 32),   // enc2
            (64 * 32 * 9, 64),   // enc3
            (64 * 32 * 9, 32),   // dec3.up
            (32 * 64 * 9, 32),   // dec3.fuse
            (32 * 16 * 9, 16),   // dec2.up
            (16 * 32 * 9, 16),   // dec2.fuse
            (16 * 8 * 9, 8),     // dec1.up
            (8 * 16 * 9, 8),     // dec1.fuse
            (8, 1),              // head L
            (24, 3),             // head R
            (24, 3),             // head N
        ];
        let expected: usize = shapes.iter().map(|(a, b)| a + b).sum();
        assert_eq!(expected, 73_087);
        assert_eq!(count_params(&init_model(0, 8).unwrap()), expected);
        assert_eq!(count_params(&init_model(9, 8).unwrap()), expected);
        assert!(count_params(&init_model(0, 64).unwrap()) > count_params(&init_model(0, 32).unwrap()));
    }

    #[test]
    fn output_shapes_follow_input() {
        let p = init_model(1, 8).unwrap();
        let t = forward_one(&p, &random_image(16, 16, 1)).unwrap();
        assert_eq!(t.illumination.dims(), (16, 16, 1));
        assert_eq!(t.reflectance.dims(), (16, 16, 3));
        assert_eq!(t.noise.dims(), (16, 16, 3));
        let t = forward_one(&p, &random_image(8, 24, 2)).unwrap();
        assert_eq!(t.reflectance.dims(), (8, 24, 3));
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = init_model(1, 8).unwrap();
        assert!(matches!(
            forward_one(&p, &Image::zeros(12, 16, 3)),
            Err(Error::SpatialSize { .. })
        ));
        assert!(matches!(
            forward_one(&p, &Image::zeros(16, 16, 1)),
            Err(Error::ChannelCount { .. })
        ));
    }

    #[test]
    fn zero_heads_give_activation_midpoints() {
        let mut p = init_model(3, 8).unwrap();
        p.zero_heads();
        let t = forward_one(&p, &random_image(16, 16, 4)).unwrap();
        assert!(t.illumination.data().iter().all(|&v| v == 0.5));
        assert!(t.reflectance.data().iter().all(|&v| v == 0.5));
        assert!(t.noise.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_equals_per_item() {
        let p = init_model(2, 8).unwrap();
        let batch: Vec<Image> = (0..3).map(|i| random_image(16, 8, i)).collect();
        let out = forward(&p, &batch).unwrap();
        for (img, t) in batch.iter().zip(&out) {
            assert_eq!(*t, forward_one(&p, img).unwrap());
        }
    }

    #[test]
    fn softplus_head_is_positive() {
        let mut p = init_model(2, 8).unwrap();
        p.set_noise_activation(NoiseActivation::Softplus);
        let t = forward_one(&p, &random_image(8, 8, 5)).unwrap();
        assert!(t.noise.data().iter().all(|&v| v > 0.0));
        assert_eq!("softplus".parse::<NoiseActivation>().unwrap(), NoiseActivation::Softplus);
        assert!("relu".parse::<NoiseActivation>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn outputs_stay_in_range(seed in 0u64..1000, scale in 0.1f64..50.0, hb in 1usize..3, wb in 1usize..3) {
            let p = init_model(seed, 8).unwrap();
            let mut rng = stream_rng(seed, Stream::Synthetic, 1, 0);
            let img = Image::from_fn(8 * hb, 8 * wb, 3, |_, _, _| rng.random_range(-scale..scale));
            let t = forward_one(&p, &img).unwrap();
            prop_assert!(t.illumination.data().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(t.reflectance.data().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(t.noise.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
