//! Sliding-window DCT hard-threshold denoiser.
//!
//! Per channel: b x b blocks at stride b/2 (the last block clamps to the
//! border), an orthonormal 2-D DCT per block, hard thresholding of all
//! non-DC coefficients at threshold_factor * sigma(block center), inverse
//! transform, and uniform averaging of overlapping blocks. The per-pixel
//! noise level is the denoiser's single tuning input.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_BLOCK: usize = 8;

/// Orthonormal DCT-II over n-point signals:
/// basis[k][m] = a_k cos(pi (2m+1) k / 2n).
struct Dct {
    n: usize,
    basis: Vec<f64>,
}

impl Dct {
    fn new(n: usize) -> Self {
        let mut basis = vec![0.0f64; n * n];
        for k in 0..n {
            let a = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            for m in 0..n {
                basis[k * n + m] = a
                    * (std::f64::consts::PI * (2.0 * m as f64 + 1.0) * k as f64
                        / (2.0 * n as f64))
                        .cos();
            }
        }
        Dct { n, basis }
    }

    /// C = D X D^T (forward) or X = D^T C D (inverse).
    fn apply(&self, x: &[f64], transpose: bool, tmp: &mut [f64], out: &mut [f64]) {
        let n = self.n;
        let d = &self.basis;
        for r in 0..n {
            for k in 0..n {
                let mut acc = 0.0;
                for m in 0..n {
                    let dv = if transpose { d[m * n + k] } else { d[k * n + m] };
                    acc += x[r * n + m] * dv;
                }
                tmp[r * n + k] = acc;
            }
        }
        for k in 0..n {
            for c in 0..n {
                let mut acc = 0.0;
                for m in 0..n {
                    let dv = if transpose { d[m * n + k] } else { d[k * n + m] };
                    acc += tmp[m * n + c] * dv;
                }
                out[k * n + c] = acc;
            }
        }
    }
}

/// Forward 2-D orthonormal DCT of one 8x8 block.
pub fn dct2_forward(block: &[f64; DEFAULT_BLOCK * DEFAULT_BLOCK]) -> [f64; DEFAULT_BLOCK * DEFAULT_BLOCK] {
    let dct = Dct::new(DEFAULT_BLOCK);
    let mut tmp = [0.0f64; DEFAULT_BLOCK * DEFAULT_BLOCK];
    let mut out = [0.0f64; DEFAULT_BLOCK * DEFAULT_BLOCK];
    dct.apply(block, false, &mut tmp, &mut out);
    out
}

/// Inverse 2-D orthonormal DCT of one 8x8 block.
pub fn dct2_inverse(coeffs: &[f64; DEFAULT_BLOCK * DEFAULT_BLOCK]) -> [f64; DEFAULT_BLOCK * DEFAULT_BLOCK] {
    let dct = Dct::new(DEFAULT_BLOCK);
    let mut tmp = [0.0f64; DEFAULT_BLOCK * DEFAULT_BLOCK];
    let mut out = [0.0f64; DEFAULT_BLOCK * DEFAULT_BLOCK];
    dct.apply(coeffs, true, &mut tmp, &mut out);
    out
}

/// Block start offsets at stride block/2, plus one clamped start covering
/// the border when the stride grid falls short.
fn block_starts(dim: usize, block: usize) -> Vec<usize> {
    let stride = (block / 2).max(1);
    let mut starts: Vec<usize> =
        (0..).map(|i| i * stride).take_while(|s| s + block <= dim).collect();
    if let Some(&last) = starts.last() {
        if last + block < dim {
            starts.push(dim - block);
        }
    }
    starts
}

fn denoise_plane(
    plane: &[f32],
    h: usize,
    w: usize,
    sigma: &[f32],
    threshold_factor: f32,
    block: usize,
) -> Vec<f32> {
    let dct = Dct::new(block);
    let ys = block_starts(h, block);
    let xs = block_starts(w, block);
    let mut acc = vec![0.0f64; h * w];
    let mut count = vec![0u32; h * w];
    let mut cells = vec![0.0f64; block * block];
    let mut tmp = vec![0.0f64; block * block];
    let mut coeffs = vec![0.0f64; block * block];
    let mut restored = vec![0.0f64; block * block];
    for &sy in &ys {
        for &sx in &xs {
            for dy in 0..block {
                for dx in 0..block {
                    cells[dy * block + dx] = plane[(sy + dy) * w + sx + dx] as f64;
                }
            }
            let cy = (sy + block / 2).min(h - 1);
            let cx = (sx + block / 2).min(w - 1);
            let threshold = (threshold_factor * sigma[cy * w + cx]) as f64;
            dct.apply(&cells, false, &mut tmp, &mut coeffs);
            for c in coeffs.iter_mut().skip(1) {
                if c.abs() <= threshold {
                    *c = 0.0;
                }
            }
            dct.apply(&coeffs, true, &mut tmp, &mut restored);
            for dy in 0..block {
                for dx in 0..block {
                    let at = (sy + dy) * w + sx + dx;
                    acc[at] += restored[dy * block + dx];
                    count[at] += 1;
                }
            }
        }
    }
    acc.iter()
        .zip(&count)
        .zip(plane)
        .map(|((&a, &c), &orig)| if c > 0 { (a / c as f64) as f32 } else { orig })
        .collect()
}

/// Denoises each RGB channel independently, steered by the per-pixel
/// (amplified) noise level map.
pub fn dct_denoise(
    image: &Tensor,
    sigma_amp: &Tensor,
    threshold_factor: f32,
    block: usize,
) -> Result<Tensor> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape("dct_denoise", "1x3xHxW", s));
    }
    let ss = sigma_amp.shape();
    if ss.n != 1 || ss.c != 1 || ss.h != s.h || ss.w != s.w {
        return Err(Error::shape("dct_denoise sigma map", format!("1x1x{}x{}", s.h, s.w), ss));
    }
    if block < 2 {
        return Err(Error::Argument(format!("denoise block must be at least 2, got {block}")));
    }
    if s.h < block || s.w < block {
        return Err(Error::Argument(format!(
            "dct_denoise needs at least {block}x{block}, got {}x{}",
            s.h, s.w
        )));
    }
    let mut out = image.clone();
    let sigma = sigma_amp.plane(0, 0);
    for c in 0..3 {
        let denoised =
            denoise_plane(image.plane(0, c), s.h, s.w, sigma, threshold_factor, block);
        out.plane_mut(0, c).copy_from_slice(&denoised);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    #[test]
    fn dct_roundtrip_is_identity() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..10 {
            let mut block = [0.0f64; 64];
            for v in &mut block {
                *v = rng.random_range(-1.0..1.0);
            }
            let back = dct2_inverse(&dct2_forward(&block));
            for (a, b) in block.iter().zip(&back) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dct_is_orthonormal() {
        // Parseval: energy preserved
        let mut rng = StdRng::seed_from_u64(2);
        let mut block = [0.0f64; 64];
        for v in &mut block {
            *v = rng.random_range(-1.0..1.0);
        }
        let coeffs = dct2_forward(&block);
        let e_in: f64 = block.iter().map(|v| v * v).sum();
        let e_out: f64 = coeffs.iter().map(|v| v * v).sum();
        assert!((e_in - e_out).abs() < 1e-9);
        // constant block concentrates all energy in DC
        let flat = [0.5f64; 64];
        let coeffs = dct2_forward(&flat);
        assert!((coeffs[0] - 0.5 * 8.0).abs() < 1e-9);
        for &c in &coeffs[1..] {
            assert!(c.abs() < 1e-9);
        }
    }

    #[test]
    fn zero_sigma_passes_through() {
        let mut rng = StdRng::seed_from_u64(3);
        let data: Vec<f32> = (0..3 * 20 * 20).map(|_| rng.random()).collect();
        let img = Tensor::from_vec(Shape4::new(1, 3, 20, 20), data).unwrap();
        let sigma = Tensor::zeros(Shape4::new(1, 1, 20, 20));
        let out = dct_denoise(&img, &sigma, 2.7, 8).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn thresholding_never_grows_coefficients() {
        let mut rng = StdRng::seed_from_u64(4);
        let mut block = [0.0f64; 64];
        for v in &mut block {
            *v = rng.random_range(-1.0..1.0);
        }
        let coeffs = dct2_forward(&block);
        let t = 0.3;
        let mut thresholded = coeffs;
        for (i, c) in thresholded.iter_mut().enumerate() {
            if i != 0 && c.abs() <= t {
                *c = 0.0;
            }
        }
        for (a, b) in thresholded.iter().zip(&coeffs) {
            assert!(a.abs() <= b.abs() + 1e-12);
        }
    }

    #[test]
    fn strong_denoising_on_constant_plus_gaussian() {
        let mut rng = StdRng::seed_from_u64(5);
        let normal = Normal::new(0.0f64, 0.1).unwrap();
        let clean = Tensor::filled(Shape4::new(1, 3, 64, 64), 0.5);
        let mut noisy = clean.clone();
        for v in noisy.data_mut() {
            *v = (*v + normal.sample(&mut rng) as f32).clamp(0.0, 1.0);
        }
        let sigma = Tensor::filled(Shape4::new(1, 1, 64, 64), 0.1);
        let out = dct_denoise(&noisy, &sigma, 2.7, 8).unwrap();
        let var = |t: &Tensor| -> f64 {
            let n = t.data().len() as f64;
            let m: f64 = t.data().iter().map(|&v| v as f64).sum::<f64>() / n;
            t.data().iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n
        };
        let before = var(&noisy);
        let after = var(&out);
        assert!(before / after >= 10.0, "variance only reduced {before} -> {after}");
    }

    #[test]
    fn alternate_block_size_roundtrips() {
        let mut rng = StdRng::seed_from_u64(6);
        let data: Vec<f32> = (0..3 * 24 * 24).map(|_| rng.random()).collect();
        let img = Tensor::from_vec(Shape4::new(1, 3, 24, 24), data).unwrap();
        let sigma = Tensor::zeros(Shape4::new(1, 1, 24, 24));
        for block in [4usize, 8, 16] {
            let out = dct_denoise(&img, &sigma, 2.7, block).unwrap();
            for (a, b) in out.data().iter().zip(img.data()) {
                assert!((a - b).abs() < 1e-6, "block {block}");
            }
        }
    }

    #[test]
    fn block_starts_cover_borders() {
        assert_eq!(block_starts(8, 8), vec![0]);
        assert_eq!(block_starts(16, 8), vec![0, 4, 8]);
        assert_eq!(block_starts(13, 8), vec![0, 4, 5]);
        for dim in 8..40 {
            let starts = block_starts(dim, 8);
            assert_eq!(*starts.last().unwrap() + 8, dim);
        }
    }
}
