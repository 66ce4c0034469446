//! Continuous-time cosine noise schedule.
//!
//! `alpha_t = cos(pi t / 2)` and `sigma_t = sin(pi t / 2)` for `t` in `[0, 1]`, so
//! `alpha^2 + sigma^2 = 1` and the signal-to-noise ratio decreases monotonically.

use std::f64::consts::FRAC_PI_2;

use crate::{Error, Result};

/// Signal and noise coefficients at a point in diffusion time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel {
    pub t: f64,
    pub alpha: f64,
    pub sigma: f64,
}

impl NoiseLevel {
    /// Signal-to-noise ratio `alpha^2 / sigma^2` (infinite at `t = 0`).
    pub fn snr(&self) -> f64 {
        (self.alpha * self.alpha) / (self.sigma * self.sigma)
    }
}

/// Noise level of the cosine schedule at time `t`.
pub fn cosine_level(t: f64) -> Result<NoiseLevel> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("time {t} outside [0, 1]")));
    }
    // cos(pi/2) is not exactly zero in floating point.
    let (alpha, sigma) = if t == 1.0 {
        (0.0, 1.0)
    } else {
        let (s, c) = (FRAC_PI_2 * t).sin_cos();
        (c, s)
    };
    Ok(NoiseLevel { t, alpha, sigma })
}

/// Variance of the reverse transition from `t` down to `s`:
/// `(sigma_s^2 / sigma_t^2) (1 - alpha_t^2 / alpha_s^2)`.
pub fn transition_variance(t: f64, s: f64) -> Result<f64> {
    if t == 0.0 {
        return Err(Error::invalid("transition variance undefined at t = 0 (sigma_t = 0)"));
    }
    if !(0.0 <= s && s <= t && t <= 1.0) {
        return Err(Error::invalid(format!("need 0 <= s <= t <= 1, got s={s}, t={t}")));
    }
    let lt = cosine_level(t)?;
    let ls = cosine_level(s)?;
    if ls.alpha == 0.0 {
        return Err(Error::invalid("transition variance undefined at s = 1 (alpha_s = 0)"));
    }
    let ratio = (lt.alpha * lt.alpha) / (ls.alpha * ls.alpha);
    let v = (ls.sigma * ls.sigma) / (lt.sigma * lt.sigma) * (1.0 - ratio);
    Ok(v.max(0.0))
}

/// Coefficients of one ancestral (DDPM) step from `t` to `s`:
/// `x_s = x0_coef * x0_hat + xt_coef * x_t + noise_std * eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpmCoefficients {
    pub x0_coef: f64,
    pub xt_coef: f64,
    pub noise_std: f64,
}

impl DdpmCoefficients {
    /// The coefficients are evaluated through `sigma_{t|s}^2 = sigma_t^2 - (alpha_t/alpha_s)^2 sigma_s^2`,
    /// which equals `1 - alpha_t^2/alpha_s^2` on the cosine schedule and makes the final
    /// step (`s = 0`) come out as exactly `(1, 0, 0)`.
    pub fn between(t: &NoiseLevel, s: &NoiseLevel) -> Result<Self> {
        if t.sigma == 0.0 || s.alpha == 0.0 || s.t >= t.t {
            return Err(Error::invalid(format!(
                "ddpm step requires 0 <= s < t, sigma_t > 0, alpha_s > 0 (t={}, s={})",
                t.t, s.t
            )));
        }
        let sig_t2 = t.sigma * t.sigma;
        let sig_s2 = s.sigma * s.sigma;
        let a_ts = t.alpha / s.alpha;
        let sig_ts2 = (sig_t2 - a_ts * a_ts * sig_s2).max(0.0);
        Ok(Self {
            x0_coef: s.alpha * sig_ts2 / sig_t2,
            xt_coef: a_ts * sig_s2 / sig_t2,
            noise_std: (sig_s2 * sig_ts2 / sig_t2).sqrt(),
        })
    }
}

/// Strictly decreasing sequence of sampling times `t_N > ... > t_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestepGrid {
    steps: Vec<f64>,
}

/// Default start time; keeps `alpha_s > 0` for every step target.
pub const DEFAULT_T_MAX: f64 = 1.0 - 1e-4;
pub const DEFAULT_T_MIN: f64 = 0.0;

impl TimestepGrid {
    /// `n + 1` equally spaced times from `t_max` down to `t_min`.
    pub fn uniform(n: usize, t_max: f64, t_min: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("timestep grid needs at least one step"));
        }
        if !(0.0 <= t_min && t_min < t_max && t_max <= 1.0) {
            return Err(Error::invalid(format!("need 0 <= t_min < t_max <= 1, got t_min={t_min}, t_max={t_max}")));
        }
        let span = t_max - t_min;
        let steps = (0..=n).map(|i| if i == n { t_min } else { t_max - span * (i as f64) / (n as f64) }).collect();
        Ok(Self { steps })
    }

    /// Grid with the default endpoints used by the samplers.
    pub fn sampling(n: usize) -> Result<Self> {
        Self::uniform(n, DEFAULT_T_MAX, DEFAULT_T_MIN)
    }

    pub fn times(&self) -> &[f64] {
        &self.steps
    }

    /// Number of sampling steps `N`.
    pub fn len(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Consecutive `(t, s)` pairs in sampling order.
    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.steps.windows(2).map(|w| (w[0], w[1]))
    }
}
