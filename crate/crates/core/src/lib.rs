//! Low-light image enhancement by Retinex decomposition with an explicit
//! multiplicative Poisson noise component.
//!
//! An observation `Y` is modeled per color channel as `Y = L ∘ R ∘ N`:
//! a single-channel illumination map `L`, a three-channel reflectance `R`
//! and a three-channel shot-noise factor `N`. A convolutional
//! encoder-decoder predicts all three maps; the enhanced image is `R ∘ L`.
//!
//! Modules:
//! - [`imageio`]: image container, 8-bit I/O, paired dataset layout
//! - [`noise`]: photon-counting degradation and noise targets
//! - [`model`]: the three-branch network with hand-written backprop
//! - [`losses`]: the composite objective and its gradient
//! - [`trainer`], [`optim`], [`checkpoint`], [`config`]: training
//! - [`enhance`]: inference and decomposition export
//! - [`metrics`]: PSNR, SSIM, NIQE, color consistency, baselines, reports

pub mod checkpoint;
pub mod config;
pub mod enhance;
pub mod error;
pub mod imageio;
pub mod losses;
pub mod metrics;
pub mod model;
pub(crate) mod nn;
pub mod noise;
pub mod optim;
pub mod rng;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use imageio::{load_image, save_image, Image, PairedSample};
pub use losses::{LossBreakdown, LossWeights};
pub use model::{DecompositionTriple, ModelParams};
pub use noise::{ExposureLevel, PhotonScale};

/// Library version.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
