//! Conditional sampling for Gaussian denoising diffusion models.
//!
//! The crate is organised bottom-up:
//!
//! - [`schedule`]: the continuous cosine noise schedule and its derived coefficients.
//! - [`denoise`]: the v-prediction denoiser contract, parameterisation conversions,
//!   exact Gaussian / Gaussian-mixture denoisers and a small trainable MLP.
//! - [`measure`]: measurement operators, distances, crossfades and the data-consistency
//!   projection.
//! - [`sampler`]: DDPM and DDIM with guidance gradients.
//! - [`tasks`]: ready-made continuation, infill, regenerate, transition and guidance tasks.
//! - [`metrics`]: Fréchet distance, class-space KL, mel reconstruction distance and
//!   realism score.
//! - [`wav`] and [`synth`]: PCM WAV I/O and seeded synthetic corpora.
//!
//! Batch work (independent sampler runs, training mini-batches) fans out over
//! [`par`], which uses rayon when the `parallel` feature is enabled and plain
//! iterators otherwise.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod denoise;
pub mod error;
pub mod linalg;
pub mod measure;
pub mod metrics;
pub mod par;
pub mod sampler;
pub mod schedule;
pub mod signal;
pub mod synth;
pub mod tasks;
pub mod wav;

pub use error::{Error, Result};
pub use signal::Signal;
