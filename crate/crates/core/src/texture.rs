//! Synthetic borehole-like textures: dipping beds that trace a sinusoid across
//! the unrolled borehole wall, plus speckle.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_traits::Float;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::dataset::{ImageGray, IMAGE_SIZE};
use crate::seed;

/// Ranges the generator draws from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextureConfig {
    /// Peak vertical displacement of a bed across the image, in rows.
    pub dip_amplitude: (f64, f64),
    /// Bed thickness cycle, in rows.
    pub wavelength: (f64, f64),
    /// Number of superposed bed frequencies.
    pub layers: usize,
    /// Contrast of the bed boundaries (tanh gain).
    pub sharpness: f64,
    /// Standard deviation of the additive speckle.
    pub speckle: f64,
}

impl Default for TextureConfig {
    fn default() -> Self {
        TextureConfig { dip_amplitude: (8.0, 32.0), wavelength: (8.0, 24.0), layers: 3, sharpness: 2.5, speckle: 0.05 }
    }
}

/// One deterministic texture image per seed.
pub fn layered_texture(seed_value: u64, cfg: &TextureConfig) -> ImageGray {
    let mut rng = seed::rng(seed::derive(seed_value, &[seed::purpose::TEXTURE]));
    let amp = rng.gen_range(cfg.dip_amplitude.0..=cfg.dip_amplitude.1);
    let azimuth = rng.gen_range(0.0..2.0 * PI);
    let beds: Vec<(f64, f64, f64)> = (0..cfg.layers.max(1))
        .map(|_| {
            let wavelength = rng.gen_range(cfg.wavelength.0..=cfg.wavelength.1);
            let weight = rng.gen_range(0.4..1.0);
            let phase = rng.gen_range(0.0..2.0 * PI);
            (wavelength, weight, phase)
        })
        .collect();
    let norm: f64 = beds.iter().map(|b| b.1).sum();
    let noise = Normal::new(0.0, cfg.speckle.max(0.0)).expect("finite std");

    let pixels = (0..IMAGE_SIZE * IMAGE_SIZE)
        .map(|i| {
            let (r, c) = ((i / IMAGE_SIZE) as f64, (i % IMAGE_SIZE) as f64);
            let depth = r + amp * Float::sin(2.0 * PI * c / IMAGE_SIZE as f64 + azimuth);
            let s: f64 =
                beds.iter().map(|&(wl, wt, ph)| wt * Float::sin(2.0 * PI * depth / wl + ph)).sum::<f64>() / norm;
            let v = 0.85 * Float::tanh(cfg.sharpness * s) + noise.sample(&mut rng);
            v.clamp(-1.0, 1.0) as f32
        })
        .collect();
    ImageGray::new(pixels).expect("clamped into range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_varied() {
        let cfg = TextureConfig::default();
        let a = layered_texture(1, &cfg);
        assert_eq!(a, layered_texture(1, &cfg));
        assert_ne!(a, layered_texture(2, &cfg));
        let mean = a.pixels().iter().map(|&v| v as f64).sum::<f64>() / a.pixels().len() as f64;
        let var = a.pixels().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / a.pixels().len() as f64;
        assert!(var > 0.05, "texture should have contrast, var {var}");
    }
}
