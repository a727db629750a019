//! Guided image filtering over full (2r+1)^2 windows, box sums via
//! integral images on mirror-extended planes.

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};

/// Triangular reflection of an arbitrary index into [0, n).
#[inline]
fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

/// Box means over (2r+1)^2 windows with mirrored borders, in f64.
fn box_mean(src: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let ph = h + 2 * r;
    let pw = w + 2 * r;
    // integral image over the mirror-padded plane
    let mut integral = vec![0.0f64; (ph + 1) * (pw + 1)];
    for y in 0..ph {
        let sy = mirror(y as isize - r as isize, h);
        let mut row_sum = 0.0f64;
        for x in 0..pw {
            let sx = mirror(x as isize - r as isize, w);
            row_sum += src[sy * w + sx];
            integral[(y + 1) * (pw + 1) + (x + 1)] = integral[y * (pw + 1) + (x + 1)] + row_sum;
        }
    }
    let win = 2 * r + 1;
    let area = (win * win) as f64;
    let mut out = vec![0.0f64; h * w];
    for y in 0..h {
        let (y0, y1) = (y, y + win);
        for x in 0..w {
            let (x0, x1) = (x, x + win);
            let sum = integral[y1 * (pw + 1) + x1] - integral[y0 * (pw + 1) + x1]
                - integral[y1 * (pw + 1) + x0]
                + integral[y0 * (pw + 1) + x0];
            out[y * w + x] = sum / area;
        }
    }
    out
}

/// Edge-preserving smoothing of `p` steered by `guide`: per window,
/// a = cov(I, p) / (var(I) + eps) and b = mean(p) - a * mean(I); the
/// output is mean(a) * I + mean(b). Windows where var(I) + eps vanishes
/// degrade to the box mean of p.
pub fn guided_filter(p: &Tensor, guide: &Tensor, r: usize, eps: f32) -> Result<Tensor> {
    let s = p.shape();
    if s != guide.shape() {
        return Err(Error::Argument(format!(
            "guided_filter: map {} and guide {} differ",
            s,
            guide.shape()
        )));
    }
    if s.n != 1 || s.c != 1 {
        return Err(Error::shape("guided_filter", "1x1xHxW", s));
    }
    let (h, w) = (s.h, s.w);
    let pv: Vec<f64> = p.data().iter().map(|&v| v as f64).collect();
    let iv: Vec<f64> = guide.data().iter().map(|&v| v as f64).collect();
    let ip: Vec<f64> = iv.iter().zip(&pv).map(|(a, b)| a * b).collect();
    let ii: Vec<f64> = iv.iter().map(|a| a * a).collect();

    let mean_i = box_mean(&iv, h, w, r);
    let mean_p = box_mean(&pv, h, w, r);
    let corr_ip = box_mean(&ip, h, w, r);
    let corr_ii = box_mean(&ii, h, w, r);

    let mut a = vec![0.0f64; h * w];
    let mut b = vec![0.0f64; h * w];
    for i in 0..h * w {
        let cov = corr_ip[i] - mean_i[i] * mean_p[i];
        let var = corr_ii[i] - mean_i[i] * mean_i[i];
        let denom = var + eps as f64;
        a[i] = if denom.abs() > 1e-12 { cov / denom } else { 0.0 };
        b[i] = mean_p[i] - a[i] * mean_i[i];
    }
    let mean_a = box_mean(&a, h, w, r);
    let mean_b = box_mean(&b, h, w, r);

    let mut out = Tensor::zeros(Shape4::new(1, 1, h, w));
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = (mean_a[i] * iv[i] + mean_b[i]) as f32;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_plane(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = StdRng::seed_from_u64(seed);
        let data: Vec<f32> = (0..h * w).map(|_| rng.random()).collect();
        Tensor::from_vec(Shape4::new(1, 1, h, w), data).unwrap()
    }

    /// Direct per-window reference with the same mirrored-border rule.
    fn reference_guided(p: &Tensor, guide: &Tensor, r: usize, eps: f64) -> Vec<f64> {
        let (h, w) = (p.shape().h, p.shape().w);
        let win_mean = |src: &dyn Fn(usize, usize) -> f64, y: usize, x: usize| -> f64 {
            let mut sum = 0.0;
            for dy in -(r as isize)..=(r as isize) {
                for dx in -(r as isize)..=(r as isize) {
                    sum += src(mirror(y as isize + dy, h), mirror(x as isize + dx, w));
                }
            }
            sum / ((2 * r + 1) * (2 * r + 1)) as f64
        };
        let gp = |y: usize, x: usize| p.at(0, 0, y, x) as f64;
        let gi = |y: usize, x: usize| guide.at(0, 0, y, x) as f64;
        let gip = |y: usize, x: usize| gi(y, x) * gp(y, x);
        let gii = |y: usize, x: usize| gi(y, x) * gi(y, x);
        let mut a = vec![0.0f64; h * w];
        let mut b = vec![0.0f64; h * w];
        for y in 0..h {
            for x in 0..w {
                let mi = win_mean(&gi, y, x);
                let mp = win_mean(&gp, y, x);
                let cov = win_mean(&gip, y, x) - mi * mp;
                let var = win_mean(&gii, y, x) - mi * mi;
                a[y * w + x] = cov / (var + eps);
                b[y * w + x] = mp - a[y * w + x] * mi;
            }
        }
        let fa = |y: usize, x: usize| a[y * w + x];
        let fb = |y: usize, x: usize| b[y * w + x];
        let mut out = vec![0.0f64; h * w];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = win_mean(&fa, y, x) * gi(y, x) + win_mean(&fb, y, x);
            }
        }
        out
    }

    #[test]
    fn constant_guide_degrades_to_box_smoothing() {
        // with a constant guide a = 0 and b = mean(p), so the output is
        // the window average of b: box smoothing of p (applied twice by
        // the output-side averaging), independent of the guide values
        let p = rand_plane(10, 10, 1);
        let guide = Tensor::filled(Shape4::new(1, 1, 10, 10), 0.5);
        let out = guided_filter(&p, &guide, 2, 0.01).unwrap();
        let pv: Vec<f64> = p.data().iter().map(|&v| v as f64).collect();
        let want = box_mean(&box_mean(&pv, 10, 10, 2), 10, 10, 2);
        for (got, want) in out.data().iter().zip(&want) {
            assert!((*got as f64 - want).abs() < 1e-6);
        }
        // a different constant guide level gives the identical output
        let guide2 = Tensor::filled(Shape4::new(1, 1, 10, 10), 0.9);
        let out2 = guided_filter(&p, &guide2, 2, 0.01).unwrap();
        for (a, b) in out.data().iter().zip(out2.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn self_guidance_with_zero_eps_is_identity() {
        // non-constant guide with variance in every window
        let g = rand_plane(12, 12, 2);
        let out = guided_filter(&g, &g, 2, 0.0).unwrap();
        for (a, b) in out.data().iter().zip(g.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn matches_direct_window_reference() {
        let p = rand_plane(12, 12, 3);
        let g = rand_plane(12, 12, 4);
        let got = guided_filter(&p, &g, 2, 0.01).unwrap();
        let want = reference_guided(&p, &g, 2, 0.01);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((*a as f64 - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn preserves_constants() {
        let p = Tensor::filled(Shape4::new(1, 1, 16, 16), 0.37);
        let g = rand_plane(16, 16, 5);
        let out = guided_filter(&p, &g, 3, 1e-3).unwrap();
        for &v in out.data() {
            assert!((v - 0.37).abs() < 1e-5);
        }
    }

    #[test]
    fn dims_mismatch_is_rejected() {
        let p = rand_plane(8, 8, 6);
        let g = rand_plane(8, 9, 7);
        assert!(guided_filter(&p, &g, 2, 0.01).is_err());
    }

    #[test]
    fn large_radius_still_works_on_small_maps() {
        let p = rand_plane(6, 6, 8);
        let g = rand_plane(6, 6, 9);
        let out = guided_filter(&p, &g, 16, 1e-3).unwrap();
        assert!(out.is_finite());
    }
}
