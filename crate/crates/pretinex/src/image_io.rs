//! 8-bit PNG input/output around planar float tensors.
//!
//! Images travel through the pipeline as shape (1, 3, h, w) tensors with
//! values in [0, 1]. Quantization to 8 bits rounds half to even.

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};
use std::path::Path;

/// Loads an 8-bit RGB PNG as a (1, 3, h, w) tensor normalized to [0, 1].
pub fn read_rgb_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(Shape4::new(1, 3, h, w));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            *t.at_mut(0, c, y as usize, x as usize) = px.0[c] as f32 / 255.0;
        }
    }
    Ok(t)
}

/// Quantizes one float value in [0, 1] to a byte, rounding half to even.
pub fn quantize_u8(v: f32) -> u8 {
    (v * 255.0).round_ties_even().clamp(0.0, 255.0) as u8
}

/// Writes a (1, 3, h, w) tensor as an 8-bit RGB PNG.
pub fn write_rgb_png(path: &Path, t: &Tensor) -> Result<()> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape("write_rgb_png", "1x3xHxW", s));
    }
    let mut img = image::RgbImage::new(s.w as u32, s.h as u32);
    for y in 0..s.h {
        for x in 0..s.w {
            let px = [
                quantize_u8(t.at(0, 0, y, x)),
                quantize_u8(t.at(0, 1, y, x)),
                quantize_u8(t.at(0, 2, y, x)),
            ];
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
}

/// Luminance plane (0.299 R + 0.587 G + 0.114 B) of an RGB tensor, as a
/// (1, 1, h, w) tensor.
pub fn luminance(t: &Tensor) -> Result<Tensor> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape("luminance", "1x3xHxW", s));
    }
    let mut out = Tensor::zeros(Shape4::new(1, 1, s.h, s.w));
    let (r, g, b) = (t.plane(0, 0), t.plane(0, 1), t.plane(0, 2));
    for (i, v) in out.plane_mut(0, 0).iter_mut().enumerate() {
        *v = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
    }
    Ok(out)
}
