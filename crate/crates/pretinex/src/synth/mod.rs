//! Synthetic low-light data generation based on a camera imaging model.

pub mod bayer;
pub mod crf;
pub mod dataset;
pub mod noise;
pub mod pipeline;
pub mod scenes;

pub use bayer::{bayer_demosaic, bayer_mosaic, BayerPhase};
pub use crf::{default_crfs, resolve_crf, Crf};
pub use dataset::{build_dataset, read_manifest, LoadedPatch, RecordMeta};
pub use noise::add_raw_noise;
pub use pipeline::{noise_gt, synthesize_lowlight, SynthParams};
