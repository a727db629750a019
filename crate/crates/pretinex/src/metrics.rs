//! Full-reference quality metrics (PSNR, SSIM) and the local variance
//! decomposition sigma^2 = sigma_n^2 + sigma_I^2 used to reason about
//! noise levels on patches.

use crate::error::{Error, Result};
use crate::image_io::luminance;
use crate::tensor::Tensor;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

/// 10 * log10(peak^2 / MSE) over all pixels and channels jointly.
/// Identical images return +inf (serialized as the string "inf").
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("psnr", a.shape(), b.shape()));
    }
    let n = a.data().len() as f64;
    let mse: f64 =
        a.data().iter().zip(b.data()).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0f64; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Mean structural similarity over luminance with the standard 11x11
/// Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, peak 1. Windows are
/// evaluated at fully valid positions only; images must be at least 11x11.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim", a.shape(), b.shape()));
    }
    let la = as_luma(a)?;
    let lb = as_luma(b)?;
    let (h, w) = (a.shape().h, a.shape().w);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Argument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let kernel = gaussian_kernel();
    // separable filtering: horizontal pass then vertical, valid region only
    let vw = w - SSIM_WINDOW + 1;
    let vh = h - SSIM_WINDOW + 1;
    let hpass = |src: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
        let mut out = vec![0.0f64; h * vw];
        for y in 0..h {
            for x in 0..vw {
                let mut acc = 0.0;
                for (i, &k) in kernel.iter().enumerate() {
                    acc += k * src(y, x + i);
                }
                out[y * vw + x] = acc;
            }
        }
        out
    };
    let vpass = |src: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0f64; vh * vw];
        for y in 0..vh {
            for x in 0..vw {
                let mut acc = 0.0;
                for (i, &k) in kernel.iter().enumerate() {
                    acc += k * src[(y + i) * vw + x];
                }
                out[y * vw + x] = acc;
            }
        }
        out
    };
    let fa = |y: usize, x: usize| la[y * w + x];
    let fb = |y: usize, x: usize| lb[y * w + x];
    let faa = |y: usize, x: usize| la[y * w + x] * la[y * w + x];
    let fbb = |y: usize, x: usize| lb[y * w + x] * lb[y * w + x];
    let fab = |y: usize, x: usize| la[y * w + x] * lb[y * w + x];
    let mu_a = vpass(&hpass(&fa));
    let mu_b = vpass(&hpass(&fb));
    let m_aa = vpass(&hpass(&faa));
    let m_bb = vpass(&hpass(&fbb));
    let m_ab = vpass(&hpass(&fab));

    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0f64;
    for i in 0..vh * vw {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = m_aa[i] - ma * ma;
        let vb = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        total += s;
    }
    Ok(total / (vh * vw) as f64)
}

fn as_luma(t: &Tensor) -> Result<Vec<f64>> {
    let s = t.shape();
    let plane = match s.c {
        1 => t.plane(0, 0).to_vec(),
        3 => luminance(t)?.into_vec(),
        _ => return Err(Error::shape("ssim luminance", "1 or 3 channels", s)),
    };
    Ok(plane.into_iter().map(f64::from).collect())
}

/// The three terms of the local variance decomposition.
#[derive(Debug, Clone, Copy)]
pub struct VarianceDecomposition {
    pub sigma_total_sq: f64,
    pub sigma_texture_sq: f64,
    pub sigma_noise_sq: f64,
}

fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// sigma_I^2 = var(clean), sigma_n^2 = var(noisy - clean),
/// sigma^2 = var(noisy). The decomposition is additive exactly when the
/// noise is independent of the clean signal.
pub fn variance_decompose(clean: &Tensor, noisy: &Tensor) -> Result<VarianceDecomposition> {
    if clean.shape() != noisy.shape() {
        return Err(Error::shape("variance_decompose", clean.shape(), noisy.shape()));
    }
    let cv: Vec<f64> = clean.data().iter().map(|&v| v as f64).collect();
    let nv: Vec<f64> = noisy.data().iter().map(|&v| v as f64).collect();
    let rv: Vec<f64> = cv.iter().zip(&nv).map(|(c, n)| n - c).collect();
    Ok(VarianceDecomposition {
        sigma_total_sq: variance(&nv),
        sigma_texture_sq: variance(&cv),
        sigma_noise_sq: variance(&rv),
    })
}

/// One metrics report row: the quality of one enhanced image at one
/// cascade depth. PSNR serializes as a number, or the string "inf" for
/// identical images.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub name: String,
    pub k: usize,
    pub psnr: f64,
    pub ssim: f64,
}

impl Serialize for EvalRecord {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("EvalRecord", 4)?;
        st.serialize_field("name", &self.name)?;
        st.serialize_field("k", &self.k)?;
        if self.psnr.is_finite() {
            st.serialize_field("psnr", &self.psnr)?;
        } else {
            st.serialize_field("psnr", "inf")?;
        }
        st.serialize_field("ssim", &self.ssim)?;
        st.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    fn rand_image(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = StdRng::seed_from_u64(seed);
        let data: Vec<f32> = (0..c * h * w).map(|_| rng.random()).collect();
        Tensor::from_vec(Shape4::new(1, c, h, w), data).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = rand_image(3, 8, 8, 1);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);

        // constant difference so the MSE is exact
        let mut b = a.clone();
        for v in b.data_mut() {
            *v += 0.1;
        }
        let p = psnr(&a, &b, 1.0).unwrap();
        assert!((p - 20.0).abs() < 1e-4, "{p}"); // MSE 0.01 -> 20 dB

        let mut c = a.clone();
        for v in c.data_mut() {
            *v += 0.01;
        }
        let p = psnr(&a, &c, 1.0).unwrap();
        assert!((p - 40.0).abs() < 1e-3, "{p}"); // MSE 1e-4 -> 40 dB
    }

    #[test]
    fn psnr_is_symmetric() {
        let a = rand_image(3, 6, 6, 2);
        let b = rand_image(3, 6, 6, 3);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        assert!(psnr(&a, &rand_image(3, 6, 7, 4), 1.0).is_err());
    }

    #[test]
    fn ssim_self_is_one() {
        let a = rand_image(3, 16, 16, 5);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_anticorrelated_is_negative() {
        let mut rng = StdRng::seed_from_u64(6);
        // mid-gray mean, strong structure
        let data: Vec<f32> = (0..3 * 32 * 32).map(|_| rng.random_range(0.2..0.8)).collect();
        let a = Tensor::from_vec(Shape4::new(1, 3, 32, 32), data).unwrap();
        let mut b = a.clone();
        for v in b.data_mut() {
            *v = 1.0 - *v;
        }
        let s = ssim(&a, &b).unwrap();
        assert!(s < 0.0, "ssim {s}");
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = rand_image(3, 8, 8, 7);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn ssim_matches_direct_window_reference() {
        let a = rand_image(1, 16, 16, 8);
        let b = rand_image(1, 16, 16, 9);
        let got = ssim(&a, &b).unwrap();

        // direct per-window reference with an explicit 2-D kernel
        let k1d = gaussian_kernel();
        let mut want = 0.0f64;
        let mut count = 0usize;
        for wy in 0..6 {
            for wx in 0..6 {
                let mut ma = 0.0;
                let mut mb = 0.0;
                let mut maa = 0.0;
                let mut mbb = 0.0;
                let mut mab = 0.0;
                for dy in 0..11 {
                    for dx in 0..11 {
                        let kw = k1d[dy] * k1d[dx];
                        let va = a.at(0, 0, wy + dy, wx + dx) as f64;
                        let vb = b.at(0, 0, wy + dy, wx + dx) as f64;
                        ma += kw * va;
                        mb += kw * vb;
                        maa += kw * va * va;
                        mbb += kw * vb * vb;
                        mab += kw * va * vb;
                    }
                }
                let (c1, c2) = (0.01f64 * 0.01, 0.03f64 * 0.03);
                let va = maa - ma * ma;
                let vb = mbb - mb * mb;
                let cov = mab - ma * mb;
                want += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        want /= count as f64;
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn variance_decompose_trivials() {
        let clean = rand_image(1, 10, 10, 10);
        let d = variance_decompose(&clean, &clean).unwrap();
        assert_eq!(d.sigma_noise_sq, 0.0);
        assert!((d.sigma_total_sq - d.sigma_texture_sq).abs() < 1e-12);
    }

    #[test]
    fn additivity_holds_for_independent_noise() {
        let mut rng = StdRng::seed_from_u64(11);
        let normal = Normal::new(0.0f64, 0.1).unwrap();
        // constant clean + gaussian noise: sigma_n^2 within 5% of 0.01
        let clean = Tensor::filled(Shape4::new(1, 1, 320, 320), 0.5);
        let mut noisy = clean.clone();
        for v in noisy.data_mut() {
            *v += normal.sample(&mut rng) as f32;
        }
        let d = variance_decompose(&clean, &noisy).unwrap();
        assert!((d.sigma_noise_sq - 0.01).abs() / 0.01 < 0.05);
        assert!((d.sigma_total_sq - d.sigma_noise_sq).abs() / d.sigma_total_sq < 0.05);

        // textured clean + independent noise: additivity within 5%
        let clean = rand_image(1, 320, 320, 12);
        let mut noisy = clean.clone();
        for v in noisy.data_mut() {
            *v += normal.sample(&mut rng) as f32;
        }
        let d = variance_decompose(&clean, &noisy).unwrap();
        let sum = d.sigma_noise_sq + d.sigma_texture_sq;
        assert!(
            (d.sigma_total_sq - sum).abs() / d.sigma_total_sq < 0.05,
            "{} vs {}",
            d.sigma_total_sq,
            sum
        );
    }

    #[test]
    fn additivity_fails_for_intensity_dependent_noise() {
        // when the "noise" is a deterministic function of the signal the
        // cross term does not vanish and naive whole-patch variance
        // overestimates the noise level
        let clean = rand_image(1, 64, 64, 13);
        let mut noisy = clean.clone();
        let mean: f32 = clean.data().iter().sum::<f32>() / clean.data().len() as f32;
        for v in noisy.data_mut() {
            *v += 0.5 * (*v - mean);
        }
        let d = variance_decompose(&clean, &noisy).unwrap();
        let sum = d.sigma_noise_sq + d.sigma_texture_sq;
        assert!(
            (d.sigma_total_sq - sum).abs() / d.sigma_total_sq > 0.2,
            "additivity unexpectedly held: {} vs {}",
            d.sigma_total_sq,
            sum
        );
    }

    #[test]
    fn eval_record_serializes_inf_as_string() {
        let r = EvalRecord { name: "x".into(), k: 2, psnr: f64::INFINITY, ssim: 1.0 };
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"psnr\":\"inf\""), "{json}");
        let r = EvalRecord { name: "x".into(), k: 2, psnr: 31.5, ssim: 0.9 };
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"psnr\":31.5"), "{json}");
    }
}
