//! Unpaired image-to-image translation that harmonizes two target styles:
//! an image-specific component style taken from the input itself and a
//! class-aware style retrieved from a learnable key-value memory.
//!
//! The crate is organized along the pipeline:
//!
//! - [`data`]: datasets of (image, label-mask) pairs and a synthetic scene
//!   generator for desk-scale experiments.
//! - [`graph`]: a small reverse-mode autodiff engine on `f64` arrays that
//!   everything below is built from.
//! - [`encoders`]: content encoder (image + label branches) and the
//!   normalization-free style encoder.
//! - [`memory`]: the class-wise key-value style memory and its read
//!   operation.
//! - [`harmonization`]: the style harmonization layer and residual block
//!   that blend component and memory styles with per-class alpha weights.
//! - [`networks`]: generator decoder, multi-scale patch discriminators and
//!   the frozen perceptual feature extractor.
//! - [`losses`]: reconstruction, adversarial, perceptual and the two
//!   contrastive objectives, plus their weighted total.
//! - [`trainer`]: the dual-direction adversarial training loop, Adam
//!   optimizer, checkpointing and ablation switches.
//! - [`metrics`]: class-wise Fréchet distance evaluation.
//! - [`config`]: the flat `key = value` run configuration shared by the
//!   CLI commands.
//!
//! The `book/` directory of the repository walks through the same modules
//! chapter by chapter; its code snippets compile and run as doc-tests.

pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod graph;
pub mod harmonization;
pub mod losses;
pub mod memory;
pub mod metrics;
pub mod networks;
pub mod optim;
pub mod oracle;
pub mod params;
pub mod trainer;

pub mod guide;

pub use error::{Error, Result};
