use crate::{Error, Result};

/// Mono real-valued sample vector. `sample_rate` is 0 for abstract vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("signal must have at least one sample"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("signal sample {i} is not finite")));
        }
        Ok(Self { samples, sample_rate })
    }

    /// Abstract vector without a sample rate.
    pub fn from_vec(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, 0)
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds, or `None` for abstract vectors.
    pub fn duration(&self) -> Option<f64> {
        (self.sample_rate > 0).then(|| self.samples.len() as f64 / self.sample_rate as f64)
    }

    /// Copy of `self` with new samples and the same rate.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, self.sample_rate)
    }
}

impl AsRef<[f64]> for Signal {
    fn as_ref(&self) -> &[f64] {
        &self.samples
    }
}

/// Number of samples spanning `seconds` at `rate`, rounded to nearest.
pub fn seconds_to_samples(seconds: f64, rate: u32) -> usize {
    (seconds * rate as f64).round() as usize
}
