//! Bayer color filter array sampling and bilinear demosaicing.

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};

/// The four 2x2 CFA phases. Letters read row-major over the 2x2 cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BayerPhase {
    Rggb,
    Grbg,
    Gbrg,
    Bggr,
}

impl BayerPhase {
    pub const ALL: [BayerPhase; 4] =
        [BayerPhase::Rggb, BayerPhase::Grbg, BayerPhase::Gbrg, BayerPhase::Bggr];

    pub fn name(self) -> &'static str {
        match self {
            BayerPhase::Rggb => "RGGB",
            BayerPhase::Grbg => "GRBG",
            BayerPhase::Gbrg => "GBRG",
            BayerPhase::Bggr => "BGGR",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::Argument(format!("unknown Bayer phase {name:?}")))
    }

    /// Color channel (0=R, 1=G, 2=B) sampled at pixel (y, x).
    #[inline]
    pub fn channel_at(self, y: usize, x: usize) -> usize {
        let cell = match self {
            BayerPhase::Rggb => [0, 1, 1, 2],
            BayerPhase::Grbg => [1, 0, 2, 1],
            BayerPhase::Gbrg => [1, 2, 0, 1],
            BayerPhase::Bggr => [2, 1, 1, 0],
        };
        cell[(y % 2) * 2 + (x % 2)]
    }
}

fn require_even(h: usize, w: usize, what: &str) -> Result<()> {
    if h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Argument(format!("{what} requires even dims >= 2, got {h}x{w}")));
    }
    Ok(())
}

/// Full color to single-channel CFA samples: each pixel keeps only the
/// channel its CFA site measures.
pub fn bayer_mosaic(rgb: &Tensor, phase: BayerPhase) -> Result<Vec<f32>> {
    let s = rgb.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape("bayer_mosaic", "1x3xHxW", s));
    }
    require_even(s.h, s.w, "bayer_mosaic")?;
    let mut raw = vec![0.0f32; s.h * s.w];
    for y in 0..s.h {
        for x in 0..s.w {
            raw[y * s.w + x] = rgb.at(0, phase.channel_at(y, x), y, x);
        }
    }
    Ok(raw)
}

/// Mirror an out-of-range offset back into [0, n): reflect-101, which
/// preserves CFA parity (index -1 maps to 1, index n maps to n-2).
#[inline]
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * n - 2 - i;
    }
    i as usize
}

/// Bilinear demosaicing: each missing color at a site is the mean of its
/// nearest same-color neighbors in the 3x3 neighborhood (4 axial greens at
/// an R/B site, 4 diagonal opposites, 2 axial neighbors at a G site).
/// Borders mirror.
pub fn bayer_demosaic(raw: &[f32], h: usize, w: usize, phase: BayerPhase) -> Result<Tensor> {
    require_even(h, w, "bayer_demosaic")?;
    if raw.len() != h * w {
        return Err(Error::shape("bayer_demosaic", h * w, raw.len()));
    }
    let mut rgb = Tensor::zeros(Shape4::new(1, 3, h, w));
    for y in 0..h {
        for x in 0..w {
            let own = phase.channel_at(y, x);
            *rgb.at_mut(0, own, y, x) = raw[y * w + x];
            for c in 0..3 {
                if c == own {
                    continue;
                }
                let mut sum = 0.0f32;
                let mut count = 0u32;
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let ny = mirror(y as isize + dy, h);
                        let nx = mirror(x as isize + dx, w);
                        // CFA color by periodic extension, judged at the
                        // unmirrored offset so parity stays consistent
                        let color = phase.channel_at((y as isize + dy).rem_euclid(2) as usize, (x as isize + dx).rem_euclid(2) as usize);
                        if color == c {
                            sum += raw[ny * w + nx];
                            count += 1;
                        }
                    }
                }
                *rgb.at_mut(0, c, y, x) = sum / count as f32;
            }
        }
    }
    Ok(rgb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn rggb_corner_carries_red() {
        assert_eq!(BayerPhase::Rggb.channel_at(0, 0), 0);
        assert_eq!(BayerPhase::Rggb.channel_at(0, 1), 1);
        assert_eq!(BayerPhase::Rggb.channel_at(1, 0), 1);
        assert_eq!(BayerPhase::Rggb.channel_at(1, 1), 2);
        let mut rgb = Tensor::zeros(Shape4::new(1, 3, 4, 4));
        for v in rgb.plane_mut(0, 0) {
            *v = 0.9; // red plane
        }
        let raw = bayer_mosaic(&rgb, BayerPhase::Rggb).unwrap();
        assert_eq!(raw[0], 0.9);
        assert_eq!(raw[1], 0.0);
    }

    #[test]
    fn constant_gray_mosaic_is_constant() {
        let rgb = Tensor::filled(Shape4::new(1, 3, 6, 6), 0.42);
        for phase in BayerPhase::ALL {
            let raw = bayer_mosaic(&rgb, phase).unwrap();
            assert!(raw.iter().all(|&v| v == 0.42));
        }
    }

    #[test]
    fn mosaic_matches_index_reference() {
        let mut rng = StdRng::seed_from_u64(41);
        let data: Vec<f32> = (0..3 * 16).map(|_| rng.random()).collect();
        let rgb = Tensor::from_vec(Shape4::new(1, 3, 4, 4), data).unwrap();
        for phase in BayerPhase::ALL {
            let raw = bayer_mosaic(&rgb, phase).unwrap();
            for y in 0..4 {
                for x in 0..4 {
                    let c = phase.channel_at(y, x);
                    assert_eq!(raw[y * 4 + x], rgb.at(0, c, y, x));
                }
            }
        }
    }

    #[test]
    fn odd_dims_rejected() {
        let rgb = Tensor::zeros(Shape4::new(1, 3, 5, 4));
        assert!(bayer_mosaic(&rgb, BayerPhase::Rggb).is_err());
        assert!(bayer_demosaic(&[0.0; 20], 5, 4, BayerPhase::Rggb).is_err());
    }

    #[test]
    fn constant_raw_demosaics_to_constant_rgb() {
        let raw = vec![0.37f32; 36];
        for phase in BayerPhase::ALL {
            let rgb = bayer_demosaic(&raw, 6, 6, phase).unwrap();
            for &v in rgb.data() {
                assert!((v - 0.37).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mosaic_demosaic_identity_on_constant_color() {
        let mut rgb = Tensor::zeros(Shape4::new(1, 3, 8, 8));
        let color = [0.8, 0.5, 0.2];
        for c in 0..3 {
            for v in rgb.plane_mut(0, c) {
                *v = color[c];
            }
        }
        for phase in BayerPhase::ALL {
            let raw = bayer_mosaic(&rgb, phase).unwrap();
            let back = bayer_demosaic(&raw, 8, 8, phase).unwrap();
            for (a, b) in back.data().iter().zip(rgb.data()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn green_at_red_site_is_axial_mean() {
        let mut rng = StdRng::seed_from_u64(42);
        let raw: Vec<f32> = (0..16).map(|_| rng.random()).collect();
        let rgb = bayer_demosaic(&raw, 4, 4, BayerPhase::Rggb).unwrap();
        // (2, 2) is an interior R site; its green is the mean of the 4
        // axial neighbors (all G sites).
        let want = (raw[1 * 4 + 2] + raw[3 * 4 + 2] + raw[2 * 4 + 1] + raw[2 * 4 + 3]) / 4.0;
        assert!((rgb.at(0, 1, 2, 2) - want).abs() < 1e-6);
        // and its blue is the mean of the 4 diagonal neighbors
        let want_b = (raw[1 * 4 + 1] + raw[1 * 4 + 3] + raw[3 * 4 + 1] + raw[3 * 4 + 3]) / 4.0;
        assert!((rgb.at(0, 2, 2, 2) - want_b).abs() < 1e-6);
    }

    #[test]
    fn green_site_uses_two_axial_neighbors_per_color() {
        let mut rng = StdRng::seed_from_u64(43);
        let raw: Vec<f32> = (0..16).map(|_| rng.random()).collect();
        let rgb = bayer_demosaic(&raw, 4, 4, BayerPhase::Rggb).unwrap();
        // (2, 1) is a G site in an R row (row 2 holds R at even x):
        // R comes from horizontal neighbors, B from vertical.
        let want_r = (raw[2 * 4 + 0] + raw[2 * 4 + 2]) / 2.0;
        let want_b = (raw[1 * 4 + 1] + raw[3 * 4 + 1]) / 2.0;
        assert!((rgb.at(0, 0, 2, 1) - want_r).abs() < 1e-6);
        assert!((rgb.at(0, 2, 2, 1) - want_b).abs() < 1e-6);
    }
}
