//! Deterministic procedural scenes used as well-exposed source imagery
//! for synthetic benchmarks: smooth color gradients, soft-edged shapes,
//! channel-correlated texture, and scattered specular highlights so that
//! most local windows contain a bright anchor, like ordinary well-exposed
//! photographs do.

use crate::error::Result;
use crate::image_io::write_rgb_png;
use crate::tensor::{Shape4, Tensor};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::path::Path;

fn smoothstep(t: f32) -> f32 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Seeded value noise: a coarse random grid bilinearly upsampled to the
/// image size, values in [-1, 1].
fn value_noise(w: usize, h: usize, cell: usize, rng: &mut StdRng) -> Vec<f32> {
    let gw = w.div_ceil(cell) + 1;
    let gh = h.div_ceil(cell) + 1;
    let grid: Vec<f32> = (0..gw * gh).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        let gy = y as f32 / cell as f32;
        let y0 = gy as usize;
        let fy = smoothstep(gy - y0 as f32);
        for x in 0..w {
            let gx = x as f32 / cell as f32;
            let x0 = gx as usize;
            let fx = smoothstep(gx - x0 as f32);
            let g = |yy: usize, xx: usize| grid[yy.min(gh - 1) * gw + xx.min(gw - 1)];
            let top = g(y0, x0) + (g(y0, x0 + 1) - g(y0, x0)) * fx;
            let bot = g(y0 + 1, x0) + (g(y0 + 1, x0 + 1) - g(y0 + 1, x0)) * fx;
            out[y * w + x] = top + (bot - top) * fy;
        }
    }
    out
}

/// Renders one scene as a (1, 3, h, w) tensor in [0, 1].
pub fn generate_scene(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut img = Tensor::zeros(Shape4::new(1, 3, h, w));

    // background: gradient between two colors along a random direction
    let c0: [f32; 3] = [rng.random_range(0.15..0.7), rng.random_range(0.15..0.7), rng.random_range(0.15..0.7)];
    let c1: [f32; 3] = [rng.random_range(0.3..0.95), rng.random_range(0.3..0.95), rng.random_range(0.3..0.95)];
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (dy, dx) = (angle.sin(), angle.cos());
    for y in 0..h {
        for x in 0..w {
            let u = ((y as f32 / h as f32 - 0.5) * dy + (x as f32 / w as f32 - 0.5) * dx) + 0.5;
            let u = smoothstep(u);
            for c in 0..3 {
                *img.at_mut(0, c, y, x) = c0[c] + (c1[c] - c0[c]) * u;
            }
        }
    }

    // soft-edged ellipses; a few of them bright
    let n_shapes = rng.random_range(8..14);
    for s in 0..n_shapes {
        let cy = rng.random_range(0.0..h as f32);
        let cx = rng.random_range(0.0..w as f32);
        let ry = rng.random_range(0.06..0.35) * h as f32;
        let rx = rng.random_range(0.06..0.35) * w as f32;
        let bright = s % 3 == 0;
        let color: [f32; 3] = if bright {
            [rng.random_range(0.85..1.0), rng.random_range(0.85..1.0), rng.random_range(0.85..1.0)]
        } else {
            [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)]
        };
        let y_lo = ((cy - ry).floor().max(0.0)) as usize;
        let y_hi = ((cy + ry).ceil().min(h as f32 - 1.0)) as usize;
        let x_lo = ((cx - rx).floor().max(0.0)) as usize;
        let x_hi = ((cx + rx).ceil().min(w as f32 - 1.0)) as usize;
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let d = ((y as f32 - cy) / ry).powi(2) + ((x as f32 - cx) / rx).powi(2);
                if d < 1.0 {
                    let alpha = smoothstep((1.0 - d) * 3.0).min(1.0) * 0.9;
                    for c in 0..3 {
                        let v = img.at_mut(0, c, y, x);
                        *v = *v * (1.0 - alpha) + color[c] * alpha;
                    }
                }
            }
        }
    }

    // channel-correlated texture at two scales
    let coarse = value_noise(w, h, 24, &mut rng);
    let fine = value_noise(w, h, 6, &mut rng);
    for y in 0..h {
        for x in 0..w {
            let m = 1.0 + 0.10 * coarse[y * w + x] + 0.05 * fine[y * w + x];
            for c in 0..3 {
                let v = img.at_mut(0, c, y, x);
                *v = (*v * m).clamp(0.0, 1.0);
            }
        }
    }

    // bring the global mean into a well-exposed band before painting the
    // highlights, so the anchors keep their full brightness
    let mean: f32 = img.data().iter().sum::<f32>() / img.data().len() as f32;
    let target = rng.random_range(0.4..0.55);
    let gain = target / mean.max(1e-3);
    for v in img.data_mut() {
        *v = (*v * gain).clamp(0.01, 1.0);
    }

    // scattered specular highlights, about one per 200 pixels; their
    // near-white peaks anchor local brightness the way highlights do in
    // well-exposed photographs
    let n_spots = (h * w / 200).max(4);
    for _ in 0..n_spots {
        let cy = rng.random_range(1..h.max(2) - 1);
        let cx = rng.random_range(1..w.max(2) - 1);
        let v: f32 = rng.random_range(0.97..1.0);
        let r = rng.random_range(1..3i32) as isize;
        for dy in -r..=r {
            for dx in -r..=r {
                let y = (cy as isize + dy).clamp(0, h as isize - 1) as usize;
                let x = (cx as isize + dx).clamp(0, w as isize - 1) as usize;
                let falloff = 1.0 - ((dy * dy + dx * dx) as f32).sqrt() / (r as f32 + 1.0);
                let a = (falloff * 1.2).clamp(0.0, 1.0);
                for c in 0..3 {
                    let px = img.at_mut(0, c, y, x);
                    *px = (*px * (1.0 - a) + v * a).min(1.0);
                }
            }
        }
    }
    img
}

/// Writes `count` scenes of size `h` x `w` into `dir` as scene000.png,
/// scene001.png, ...; returns the paths.
pub fn write_scene_dir(
    dir: &Path,
    count: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let scene = generate_scene(h, w, seed.wrapping_add(i as u64));
        let path = dir.join(format!("scene{i:03}.png"));
        write_rgb_png(&path, &scene)?;
        paths.push(path);
    }
    Ok(paths)
}
