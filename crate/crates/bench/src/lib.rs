//! Fixtures shared by the criterion benches.

use lowlight_core::config::TrainConfig;
use lowlight_core::noise::simulate_low_light;
use lowlight_core::synthetic::synthetic_scene;
use lowlight_core::{ExposureLevel, Image, PairedSample, PhotonScale};

pub fn scene(size: usize, seed: u64) -> Image {
    synthetic_scene(size, size, seed).expect("valid size")
}

/// A clean scene and its simulated low-light version.
pub fn pair(size: usize, seed: u64) -> PairedSample {
    let clean = scene(size, seed);
    let e = ExposureLevel::new(0.15).expect("valid exposure");
    let s = PhotonScale::new(255.0).expect("valid scale");
    let low = simulate_low_light(&clean, e, s, seed ^ 0x5eed).expect("simulate");
    PairedSample::new(format!("b{seed}"), low, clean).expect("matching shapes")
}

pub fn config(width: usize, patch: usize) -> TrainConfig {
    TrainConfig {
        width,
        patch,
        ..Default::default()
    }
}
