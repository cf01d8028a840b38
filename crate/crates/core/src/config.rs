//! Training configuration and its flat `key = value` file format.
//!
//! Blank lines and `#` comments are ignored. Keys are the field names of
//! [`TrainConfig`]; the loss weights are flattened to `lambda1`, `lambda2`,
//! `gamma`, `beta` and `alpha`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::{NoiseActivation, DEFAULT_WIDTH, MIN_WIDTH};
use crate::noise::PhotonScale;
use crate::optim::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from `lr` to zero over the whole run.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CropMode {
    /// A fresh random crop every time a pair is visited.
    #[default]
    Random,
    /// One crop per pair, drawn once and reused every epoch.
    Fixed,
}

macro_rules! keyword_enum {
    ($ty:ty, $($variant:path => $text:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(Error::Config(format!("unknown value {other:?}"))),
                }
            }
        }
    };
}

keyword_enum!(LrSchedule, LrSchedule::Constant => "constant", LrSchedule::Cosine => "cosine");
keyword_enum!(CropMode, CropMode::Random => "random", CropMode::Fixed => "fixed");

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patch: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub photon_scale: PhotonScale,
    pub width: usize,
    pub checkpoint_every: usize,
    pub val_fraction: f64,
    /// Global-norm gradient clip; 0 disables clipping.
    pub grad_clip: f64,
    pub lr_schedule: LrSchedule,
    pub noise_head_activation: NoiseActivation,
    pub crop_mode: CropMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 100,
            batch_size: 16,
            patch: 128,
            seed: 0,
            weights: LossWeights::default(),
            photon_scale: PhotonScale::default(),
            width: DEFAULT_WIDTH,
            checkpoint_every: 10,
            val_fraction: 0.05,
            grad_clip: 0.0,
            lr_schedule: LrSchedule::Constant,
            noise_head_activation: NoiseActivation::Tanh,
            crop_mode: CropMode::Random,
        }
    }
}

/// Every recognized key, in file order.
pub const KEYS: &[&str] = &[
    "lr",
    "beta1",
    "beta2",
    "eps",
    "epochs",
    "batch_size",
    "patch",
    "seed",
    "lambda1",
    "lambda2",
    "gamma",
    "beta",
    "alpha",
    "photon_scale",
    "width",
    "checkpoint_every",
    "val_fraction",
    "grad_clip",
    "lr_schedule",
    "noise_head_activation",
    "crop_mode",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Set one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "patch" => self.patch = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "lambda1" => self.weights.lambda1 = parse(key, value)?,
            "lambda2" => self.weights.lambda2 = parse(key, value)?,
            "gamma" => self.weights.gamma = parse(key, value)?,
            "beta" => self.weights.beta = parse(key, value)?,
            "alpha" => self.weights.alpha = parse(key, value)?,
            "photon_scale" => self.photon_scale = PhotonScale::new(parse(key, value)?)?,
            "width" => self.width = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "lr_schedule" => self.lr_schedule = value.parse()?,
            "noise_head_activation" => self.noise_head_activation = value.parse()?,
            "crop_mode" => self.crop_mode = value.parse()?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "lr" => self.lr.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "eps" => self.eps.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "patch" => self.patch.to_string(),
            "seed" => self.seed.to_string(),
            "lambda1" => self.weights.lambda1.to_string(),
            "lambda2" => self.weights.lambda2.to_string(),
            "gamma" => self.weights.gamma.to_string(),
            "beta" => self.weights.beta.to_string(),
            "alpha" => self.weights.alpha.to_string(),
            "photon_scale" => self.photon_scale.get().to_string(),
            "width" => self.width.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "val_fraction" => self.val_fraction.to_string(),
            "grad_clip" => self.grad_clip.to_string(),
            "lr_schedule" => self.lr_schedule.to_string(),
            "noise_head_activation" => self.noise_head_activation.to_string(),
            "crop_mode" => self.crop_mode.to_string(),
            _ => return None,
        })
    }

    /// Apply `key = value` lines on top of the current values.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&text)
    }

    /// Every key, one `key = value` per line.
    pub fn to_kv(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("known key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if self.lr <= 0.0 && self.epochs > 0 {
            log::warn!("lr = {} leaves parameters unchanged", self.lr);
        }
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patch == 0 || !self.patch.is_multiple_of(8) {
            return Err(Error::Config(format!("patch must be a positive multiple of 8, got {}", self.patch)));
        }
        if self.width < MIN_WIDTH {
            return Err(Error::Config(format!("width must be at least {MIN_WIDTH}")));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return Err(Error::Config("grad_clip must be non-negative".into()));
        }
        Ok(())
    }
}
