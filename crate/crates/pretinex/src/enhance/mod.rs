//! Test-time enhancement: guided smoothing of the illumination map,
//! Retinex division, noise-map amplification, and guided DCT denoising.

pub mod dct;
pub mod guided;

pub use dct::dct_denoise;
pub use guided::guided_filter;

use crate::error::{Error, Result};
use crate::image_io::luminance;
use crate::progressive::{infer_maps, ProgressiveConfig, StageModels};
use crate::tensor::Tensor;

/// Lower bound applied to illumination maps so division stays safe.
pub const ILLUMINATION_FLOOR: f32 = 1e-3;

/// Full-resolution per-pixel illumination, clamped to
/// [[`ILLUMINATION_FLOOR`], 1].
#[derive(Debug, Clone)]
pub struct IlluminationMap(Tensor);

/// Full-resolution per-pixel noise level in [0, 1].
#[derive(Debug, Clone)]
pub struct NoiseLevelMap(Tensor);

impl IlluminationMap {
    /// Clamps into range and validates the shape.
    pub fn new(mut map: Tensor) -> Result<Self> {
        let s = map.shape();
        if s.n != 1 || s.c != 1 {
            return Err(Error::shape("IlluminationMap", "1x1xHxW", s));
        }
        for v in map.data_mut() {
            *v = v.clamp(ILLUMINATION_FLOOR, 1.0);
        }
        Ok(IlluminationMap(map))
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

impl NoiseLevelMap {
    pub fn new(mut map: Tensor) -> Result<Self> {
        let s = map.shape();
        if s.n != 1 || s.c != 1 {
            return Err(Error::shape("NoiseLevelMap", "1x1xHxW", s));
        }
        for v in map.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(NoiseLevelMap(map))
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Enhancement parameters. The defaults are the tuned operating point.
#[derive(Debug, Clone)]
pub struct EnhanceConfig {
    pub epsilon_div: f32,
    pub guided_radius: usize,
    pub guided_eps: f32,
    pub denoise_threshold_factor: f32,
    pub denoise_block: usize,
    pub denoise: bool,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        EnhanceConfig {
            epsilon_div: 1e-3,
            guided_radius: 16,
            guided_eps: 1e-3,
            denoise_threshold_factor: 2.7,
            denoise_block: dct::DEFAULT_BLOCK,
            denoise: true,
        }
    }
}

/// Retinex division: R(x, c) = I(x, c) / max(L(x), eps), clamped to
/// [0, 1]. The same illumination divides all three channels.
pub fn retinex_enhance(image: &Tensor, lmap: &Tensor, epsilon_div: f32) -> Result<Tensor> {
    let s = image.shape();
    let ls = lmap.shape();
    if s.n != 1 || s.c != 3 || ls.n != 1 || ls.c != 1 || ls.h != s.h || ls.w != s.w {
        return Err(Error::shape(
            "retinex_enhance",
            format!("image 1x3xHxW with 1x1x{}x{} map", s.h, s.w),
            format!("image {s}, map {ls}"),
        ));
    }
    let mut out = image.clone();
    let l = lmap.plane(0, 0);
    for c in 0..3 {
        let plane = out.plane_mut(0, c);
        for (v, &lv) in plane.iter_mut().zip(l.iter()) {
            *v = (*v / lv.max(epsilon_div)).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Division by the illumination scales the noise term the same way:
/// sigma_amp(x) = sigma(x) / max(L(x), eps), clamped to [0, 1].
pub fn amplify_noise_map(sigma: &Tensor, lmap: &Tensor, epsilon_div: f32) -> Result<Tensor> {
    if sigma.shape() != lmap.shape() {
        return Err(Error::shape("amplify_noise_map", sigma.shape(), lmap.shape()));
    }
    let mut out = sigma.clone();
    for (v, &lv) in out.data_mut().iter_mut().zip(lmap.data()) {
        *v = (*v / lv.max(epsilon_div)).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Enhancement given already-estimated maps: guided-filter the
/// illumination against the image luminance, divide, amplify the noise
/// map, and denoise (unless disabled).
pub fn enhance_with_maps(
    image: &Tensor,
    lmap: &IlluminationMap,
    nmap: &NoiseLevelMap,
    cfg: &EnhanceConfig,
) -> Result<Tensor> {
    let guide = luminance(image)?;
    let smoothed = guided_filter(lmap.as_tensor(), &guide, cfg.guided_radius, cfg.guided_eps)?;
    let smoothed = IlluminationMap::new(smoothed)?; // re-clamp after filtering
    let reflectance = retinex_enhance(image, smoothed.as_tensor(), cfg.epsilon_div)?;
    if !cfg.denoise {
        return Ok(reflectance);
    }
    let sigma_amp =
        amplify_noise_map(nmap.as_tensor(), smoothed.as_tensor(), cfg.epsilon_div)?;
    dct_denoise(&reflectance, &sigma_amp, cfg.denoise_threshold_factor, cfg.denoise_block)
}

/// The full test-time pipeline: infer the illumination and noise maps
/// with a k-stage cascade, then enhance.
pub fn enhance_pipeline(
    image: &Tensor,
    models: &StageModels,
    k: usize,
    prog_cfg: &ProgressiveConfig,
    cfg: &EnhanceConfig,
    threads: usize,
) -> Result<Tensor> {
    let (lmap, nmap) = infer_maps(models, image, prog_cfg, k, threads)?;
    enhance_with_maps(image, &lmap, &nmap, cfg)
}
