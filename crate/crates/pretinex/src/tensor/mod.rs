//! Dense 4-D `f32` tensors and the layer primitives the perception
//! networks are built from: pointwise (1x1) convolution, max pooling,
//! channel concatenation, ReLU, bilinear resizing, plus weight
//! initialization and the SGD optimizer.

pub mod ops;
pub mod optim;

use crate::error::{Error, Result};
use std::fmt;

/// Tensor layout: (batch, channels, height, width), row-major with the
/// batch axis outermost and width innermost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Spatial pixel count per channel plane.
    pub fn hw(&self) -> usize {
        self.h * self.w
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense 4-D array of finite `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape4,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: Shape4) -> Self {
        Tensor { shape, data: vec![0.0; shape.len()] }
    }

    pub fn filled(shape: Shape4, value: f32) -> Self {
        Tensor { shape, data: vec![value; shape.len()] }
    }

    /// Builds a tensor from raw data, enforcing the length and
    /// finiteness invariants.
    pub fn from_vec(shape: Shape4, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!("{} values for {shape}", shape.len()),
                data.len(),
            ));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: format!("tensor value {bad}"), iteration: None });
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut f32 {
        let i = self.index(n, c, y, x);
        &mut self.data[i]
    }

    /// Contiguous (h*w) plane for one (batch, channel) pair.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let hw = self.shape.hw();
        let start = (n * self.shape.c + c) * hw;
        &self.data[start..start + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let hw = self.shape.hw();
        let start = (n * self.shape.c + c) * hw;
        &mut self.data[start..start + hw]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Extracts item `n` of the batch as a shape (1, c, h, w) tensor.
    pub fn item(&self, n: usize) -> Tensor {
        let per = self.shape.c * self.shape.hw();
        let start = n * per;
        Tensor {
            shape: Shape4::new(1, self.shape.c, self.shape.h, self.shape.w),
            data: self.data[start..start + per].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        let err = Tensor::from_vec(Shape4::new(1, 2, 2, 2), vec![0.0; 7]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('8') && msg.contains('7'), "{msg}");
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        assert!(Tensor::from_vec(Shape4::new(1, 1, 1, 2), vec![0.0, f32::NAN]).is_err());
        assert!(Tensor::from_vec(Shape4::new(1, 1, 1, 2), vec![0.0, f32::INFINITY]).is_err());
    }

    #[test]
    fn indexing_is_row_major() {
        let mut t = Tensor::zeros(Shape4::new(2, 3, 4, 5));
        *t.at_mut(1, 2, 3, 4) = 7.0;
        assert_eq!(t.data()[t.shape().len() - 1], 7.0);
        assert_eq!(t.plane(1, 2)[3 * 5 + 4], 7.0);
    }

    #[test]
    fn item_extracts_batch_element() {
        let data: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let t = Tensor::from_vec(Shape4::new(2, 2, 1, 3), data).unwrap();
        let second = t.item(1);
        assert_eq!(second.shape(), Shape4::new(1, 2, 1, 3));
        assert_eq!(second.data(), &[6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
    }
}
