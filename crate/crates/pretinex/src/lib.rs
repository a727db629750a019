//! Progressive Retinex low-light image enhancement.
//!
//! The pipeline decomposes a low-light image I into reflectance and
//! illumination (I = R * L) with an explicit noise term. Two fully
//! pointwise convolutional networks estimate the per-patch illumination
//! (IM-Net) and noise level (NM-Net); a K-stage progressive schedule
//! feeds each network's estimate into the other's input until the
//! estimates stabilize. Enhancement divides by the smoothed illumination
//! map and removes the amplified noise with a transform-domain denoiser
//! driven by the estimated noise level map.
//!
//! Training data is synthesized with a camera imaging model: darkening,
//! inverse camera response, Bayer mosaicing, illumination-dependent plus
//! independent raw-domain noise, demosaicing, and the camera response —
//! which reproduces the spatially correlated, illumination-dependent
//! noise of real low-light photographs.

pub mod cli;
pub mod enhance;
pub mod error;
pub mod image_io;
pub mod metrics;
pub mod net;
pub mod progressive;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Shape4, Tensor};
