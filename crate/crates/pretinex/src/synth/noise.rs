//! Raw-domain noise injection: an illumination-dependent component whose
//! variance scales linearly with irradiance (shot-noise law) plus an
//! independent floor.

use rand::rngs::StdRng;
use rand_distr::{Distribution, StandardNormal};

/// Headroom kept around the nominal [0, 1] raw range so that clamping does
/// not bias the noise statistics before demosaicing; the final CRF
/// application saturates to [0, 1].
pub const RAW_CLAMP: (f32, f32) = (-0.5, 1.5);

/// Adds n ~ Normal(0, sigma_s^2 * L(x) + sigma_c^2) per pixel to the raw
/// irradiance plane and clamps to the headroom range.
pub fn add_raw_noise(raw: &[f32], sigma_s: f32, sigma_c: f32, rng: &mut StdRng) -> Vec<f32> {
    let var_c = (sigma_c as f64) * (sigma_c as f64);
    let var_s = (sigma_s as f64) * (sigma_s as f64);
    raw.iter()
        .map(|&l| {
            let var = var_s * f64::from(l.max(0.0)) + var_c;
            let n: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
            (l + (n * var.sqrt()) as f32).clamp(RAW_CLAMP.0, RAW_CLAMP.1)
        })
        .collect()
}
