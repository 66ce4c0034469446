//! Seeded synthetic corpora standing in for recorded music.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Signal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthParams {
    /// Sum of sines at fixed frequencies with random phases, scaled so the peak amplitude is at most `amplitude`.
    SineMix { frequencies: Vec<f64>, amplitude: f64, len: usize, sample_rate: u32 },
    /// Stationary AR(1): `x_i = rho x_{i-1} + sqrt(1 - rho^2) sqrt(var) z_i`, `x_0 ~ N(0, var)`.
    Ar1Gaussian { rho: f64, variance: f64, len: usize, sample_rate: u32 },
    /// Isotropic mixture: component `k` with probability `weights[k]`, then `means[k] + sqrt(var) z`.
    Gmm { weights: Vec<f64>, means: Vec<Vec<f64>>, variance: f64, sample_rate: u32 },
}

impl SynthParams {
    pub fn name(&self) -> &'static str {
        match self {
            SynthParams::SineMix { .. } => "sine_mix",
            SynthParams::Ar1Gaussian { .. } => "ar1_gaussian",
            SynthParams::Gmm { .. } => "gmm",
        }
    }

    pub fn sample_rate(&self) -> u32 {
        match self {
            SynthParams::SineMix { sample_rate, .. }
            | SynthParams::Ar1Gaussian { sample_rate, .. }
            | SynthParams::Gmm { sample_rate, .. } => *sample_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SynthParams::SineMix { frequencies, amplitude, len, sample_rate } => {
                if frequencies.is_empty() || *len == 0 || *sample_rate == 0 {
                    return Err(Error::invalid("sine_mix needs frequencies, a length and a sample rate"));
                }
                let nyquist = *sample_rate as f64 / 2.0;
                if frequencies.iter().any(|f| !(*f > 0.0 && *f < nyquist)) {
                    return Err(Error::invalid(format!("sine_mix frequencies must lie in (0, {nyquist})")));
                }
                if !(*amplitude > 0.0 && amplitude.is_finite()) {
                    return Err(Error::invalid("sine_mix amplitude must be positive"));
                }
            }
            SynthParams::Ar1Gaussian { rho, variance, len, .. } => {
                if !(rho.abs() < 1.0) || !(*variance > 0.0 && variance.is_finite()) || *len == 0 {
                    return Err(Error::invalid("ar1_gaussian needs |rho| < 1, variance > 0 and len > 0"));
                }
            }
            SynthParams::Gmm { weights, means, variance, .. } => {
                if weights.is_empty() || weights.len() != means.len() {
                    return Err(Error::invalid("gmm needs one weight per mean"));
                }
                let dim = means[0].len();
                if dim == 0 || means.iter().any(|m| m.len() != dim || m.iter().any(|v| !v.is_finite())) {
                    return Err(Error::invalid("gmm means must share a non-zero dimension"));
                }
                if weights.iter().any(|w| !(*w >= 0.0)) || !(weights.iter().sum::<f64>() > 0.0) {
                    return Err(Error::invalid("gmm weights must be non-negative and not all zero"));
                }
                if !(*variance >= 0.0 && variance.is_finite()) {
                    return Err(Error::invalid("gmm variance must be non-negative"));
                }
            }
        }
        Ok(())
    }

    /// Draws one signal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Signal> {
        self.validate()?;
        let samples = match self {
            SynthParams::SineMix { frequencies, amplitude, len, sample_rate } => {
                let phases: Vec<f64> = frequencies.iter().map(|_| rng.random::<f64>() * 2.0 * PI).collect();
                let gain = amplitude / frequencies.len() as f64;
                (0..*len)
                    .map(|i| {
                        let t = i as f64 / *sample_rate as f64;
                        gain * frequencies.iter().zip(&phases).map(|(f, p)| (2.0 * PI * f * t + p).sin()).sum::<f64>()
                    })
                    .collect()
            }
            SynthParams::Ar1Gaussian { rho, variance, len, .. } => {
                let sd = variance.sqrt();
                let innov = (1.0 - rho * rho).sqrt() * sd;
                let mut x = Vec::with_capacity(*len);
                let mut prev = sd * rng.sample::<f64, _>(StandardNormal);
                x.push(prev);
                for _ in 1..*len {
                    prev = rho * prev + innov * rng.sample::<f64, _>(StandardNormal);
                    x.push(prev);
                }
                x
            }
            SynthParams::Gmm { weights, means, variance, .. } => {
                let total: f64 = weights.iter().sum();
                let u = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut k = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                let sd = variance.sqrt();
                means[k].iter().map(|m| m + sd * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<f64>>()
            }
        };
        Signal::new(samples, self.sample_rate())
    }

    /// Draws `count` signals from one generator.
    pub fn corpus<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<Signal>> {
        (0..count).map(|_| self.sample(rng)).collect()
    }
}
