//! The v-prediction denoiser contract and conversions between parameterisations.
//!
//! With `x_t = alpha x_0 + sigma eps` the network target is `v = alpha eps - sigma x_0`,
//! from which `x_0 = alpha x_t - sigma v` and `eps = (x_t - alpha x_0) / sigma`.

mod gaussian;
mod gmm;
pub mod mlp;

use std::fmt;

pub use gaussian::{Covariance, GaussianDenoiser, GaussianPrior};
pub use gmm::GmmDenoiser;
pub use mlp::{MlpConfig, MlpDenoiser, TrainConfig, TrainingLog};

use crate::error::check_len;
use crate::schedule::{cosine_level, NoiseLevel};
use crate::{Error, Result, Signal};

/// A v-prediction model together with its vector-Jacobian product.
///
/// Implementations are immutable and shareable across concurrent sampler runs.
/// Both methods require `level.sigma > 0`.
pub trait Denoiser: Send + Sync + fmt::Debug {
    /// Whether the model can process a signal of `len` samples.
    fn supports_len(&self, len: usize) -> bool;

    fn predict_v(&self, x_t: &[f64], level: &NoiseLevel) -> Vec<f64>;

    /// Gradient of `<cotangent, predict_v(x_t)>` with respect to `x_t`.
    fn vjp(&self, x_t: &[f64], level: &NoiseLevel, cotangent: &[f64]) -> Vec<f64>;

    /// Denoised estimate `alpha x_t - sigma v(x_t)`.
    fn predict_x0(&self, x_t: &[f64], level: &NoiseLevel) -> Vec<f64> {
        let v = self.predict_v(x_t, level);
        x_t.iter().zip(&v).map(|(x, v)| level.alpha * x - level.sigma * v).collect()
    }
}

/// `x_t = alpha x0 + sigma z`.
pub fn forward_noise(x0: &Signal, t: f64, z: &[f64]) -> Result<Signal> {
    check_len(x0.len(), z.len())?;
    let l = cosine_level(t)?;
    x0.with_samples(combine(l.alpha, x0.samples(), l.sigma, z))
}

/// `v = alpha eps - sigma x0`.
pub fn v_target(x0: &Signal, eps: &[f64], t: f64) -> Result<Signal> {
    check_len(x0.len(), eps.len())?;
    let l = cosine_level(t)?;
    x0.with_samples(combine(l.alpha, eps, -l.sigma, x0.samples()))
}

/// `x0 = alpha x_t - sigma v`.
pub fn x0_from_v(x_t: &Signal, v: &[f64], t: f64) -> Result<Signal> {
    check_len(x_t.len(), v.len())?;
    let l = cosine_level(t)?;
    x_t.with_samples(combine(l.alpha, x_t.samples(), -l.sigma, v))
}

/// `eps = (x_t - alpha x0_hat) / sigma`; undefined at `t = 0`.
pub fn eps_from_x0(x_t: &Signal, x0_hat: &[f64], t: f64) -> Result<Signal> {
    check_len(x_t.len(), x0_hat.len())?;
    let l = cosine_level(t)?;
    if l.sigma == 0.0 {
        return Err(Error::invalid("eps_from_x0 undefined at t = 0"));
    }
    x_t.with_samples(eps_from_x0_raw(x_t.samples(), x0_hat, &l))
}

pub(crate) fn eps_from_x0_raw(x_t: &[f64], x0_hat: &[f64], l: &NoiseLevel) -> Vec<f64> {
    x_t.iter().zip(x0_hat).map(|(x, x0)| (x - l.alpha * x0) / l.sigma).collect()
}

/// `v` implied by a denoised estimate: `(alpha x_t - x0_hat) / sigma`.
pub(crate) fn v_from_x0(x_t: &[f64], x0_hat: &[f64], l: &NoiseLevel) -> Vec<f64> {
    x_t.iter().zip(x0_hat).map(|(x, x0)| (l.alpha * x - x0) / l.sigma).collect()
}

fn combine(a: f64, x: &[f64], b: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(x, y)| a * x + b * y).collect()
}
