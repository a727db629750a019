//! Weight initialization, the momentum-SGD update, and the step-wise
//! learning-rate schedule.

use super::{Shape4, Tensor};
use crate::error::{Error, Result};
use rand::rngs::StdRng;
use rand_distr::{Distribution, Normal};

/// Default optimizer hyperparameters used across all training runs.
pub const DEFAULT_BASE_LR: f32 = 0.005;
pub const DEFAULT_MOMENTUM: f32 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f32 = 5e-6;

/// Zero-mean normal init with std sqrt(2 / fan_in).
pub fn msra_init(fan_in: usize, shape: Shape4, rng: &mut StdRng) -> Tensor {
    assert!(fan_in > 0, "msra_init requires positive fan_in");
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid std");
    let data: Vec<f32> = (0..shape.len()).map(|_| normal.sample(rng) as f32).collect();
    Tensor::from_vec(shape, data).expect("normal samples are finite")
}

/// Momentum buffer plus step counter for one parameter group. Buffer
/// lengths mirror the flattened parameter tensors they were created for.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    buffers: Vec<Vec<f32>>,
    iteration: u64,
}

impl OptimizerState {
    pub fn new(param_lens: &[usize]) -> Self {
        OptimizerState {
            buffers: param_lens.iter().map(|&l| vec![0.0; l]).collect(),
            iteration: 0,
        }
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
    /// Applies the update to every (param, grad) pair and bumps the step
    /// counter once. Non-finite gradients abort before any mutation.
    pub fn sgd_step(
        &mut self,
        params: &mut [&mut [f32]],
        grads: &[&[f32]],
        lr: f32,
        momentum: f32,
        weight_decay: f32,
    ) -> Result<()> {
        if params.len() != self.buffers.len() || grads.len() != self.buffers.len() {
            return Err(Error::Argument(format!(
                "sgd_step got {} params / {} grads for {} buffers",
                params.len(),
                grads.len(),
                self.buffers.len()
            )));
        }
        for g in grads {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "gradient".into(),
                    iteration: Some(self.iteration),
                });
            }
        }
        for ((p, g), buf) in params.iter_mut().zip(grads).zip(self.buffers.iter_mut()) {
            sgd_update_slice(p, g, buf, lr, momentum, weight_decay);
        }
        self.iteration += 1;
        Ok(())
    }
}

/// The per-slice SGD kernel; see [`OptimizerState::sgd_step`].
pub fn sgd_update_slice(
    param: &mut [f32],
    grad: &[f32],
    velocity: &mut [f32],
    lr: f32,
    momentum: f32,
    weight_decay: f32,
) {
    debug_assert_eq!(param.len(), grad.len());
    debug_assert_eq!(param.len(), velocity.len());
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
}

/// base * 2^-floor(iteration / 10000), floored after four halvings
/// (0.005 down to 3.125e-4 with the default base).
pub fn lr_with_base(base: f32, iteration: u64) -> f32 {
    let halvings = (iteration / 10_000).min(4) as i32;
    base * 0.5f32.powi(halvings)
}

pub fn lr_schedule(iteration: u64) -> f32 {
    lr_with_base(DEFAULT_BASE_LR, iteration)
}
