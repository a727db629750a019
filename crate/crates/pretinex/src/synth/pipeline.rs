//! Low-light synthesis: I_l = f(M(M^-1(f^-1(I_n * t)) + n_s + n_c)),
//! where f is the camera response, M^-1 mosaics full color down to CFA
//! samples and M demosaics back. Darkening happens in the intensity
//! domain, the noise in the raw (irradiance) domain, so the output noise
//! is both illumination-dependent and spatially correlated.

use super::bayer::{bayer_demosaic, bayer_mosaic, BayerPhase};
use super::crf::Crf;
use super::noise::add_raw_noise;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::rngs::StdRng;
use rand::SeedableRng;

/// Per-patch synthesis parameters.
#[derive(Debug, Clone)]
pub struct SynthParams<'a> {
    /// Darkening coefficient in [0, 1].
    pub t: f32,
    /// Illumination-dependent noise scale, drawn from [0, 0.16].
    pub sigma_s: f32,
    /// Independent noise std, drawn from [0, 0.06].
    pub sigma_c: f32,
    pub crf: &'a Crf,
    pub phase: BayerPhase,
    pub seed: u64,
}

impl SynthParams<'_> {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.t) {
            return Err(Error::Argument(format!("t must lie in [0, 1], got {}", self.t)));
        }
        if self.sigma_s < 0.0 || self.sigma_c < 0.0 {
            return Err(Error::Argument("noise scales must be non-negative".into()));
        }
        Ok(())
    }
}

/// Runs the full camera pipeline on a clean image in [0, 1]; returns the
/// noisy low-light result and the noiseless variant of the same pipeline.
pub fn synthesize_lowlight(clean: &Tensor, params: &SynthParams) -> Result<(Tensor, Tensor)> {
    params.validate()?;
    let s = clean.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape("synthesize_lowlight", "1x3xHxW", s));
    }

    // darken, then into the irradiance domain
    let mut irradiance = clean.clone();
    for v in irradiance.data_mut() {
        *v = params.crf.invert((*v * params.t).clamp(0.0, 1.0));
    }
    let raw = bayer_mosaic(&irradiance, params.phase)?;

    let mut rng = StdRng::seed_from_u64(params.seed);
    let noisy_raw = add_raw_noise(&raw, params.sigma_s, params.sigma_c, &mut rng);

    let develop = |raw: &[f32]| -> Result<Tensor> {
        let mut rgb = bayer_demosaic(raw, s.h, s.w, params.phase)?;
        for v in rgb.data_mut() {
            *v = params.crf.apply(*v);
        }
        Ok(rgb)
    };
    Ok((develop(&noisy_raw)?, develop(&raw)?))
}

/// Ground-truth output-domain noise level: the standard deviation of the
/// residual between the noisy and noiseless pipeline outputs, over all
/// pixels and channels.
pub fn noise_gt(lowlight: &Tensor, lowlight_noiseless: &Tensor) -> Result<f32> {
    if lowlight.shape() != lowlight_noiseless.shape() {
        return Err(Error::shape("noise_gt", lowlight.shape(), lowlight_noiseless.shape()));
    }
    let n = lowlight.data().len() as f64;
    let mut sum = 0.0f64;
    for (&a, &b) in lowlight.data().iter().zip(lowlight_noiseless.data()) {
        sum += (a - b) as f64;
    }
    let mean = sum / n;
    let mut ss = 0.0f64;
    for (&a, &b) in lowlight.data().iter().zip(lowlight_noiseless.data()) {
        ss += ((a - b) as f64 - mean).powi(2);
    }
    Ok((ss / n).sqrt() as f32)
}
