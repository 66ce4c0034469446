use super::{v_from_x0, Denoiser};
use crate::schedule::NoiseLevel;
use crate::{Error, Result};

/// Exact denoiser for an isotropic Gaussian mixture `sum_k w_k N(mu_k, var I)`.
///
/// Component marginals of `x_t` are `N(alpha mu_k, s^2 I)` with `s^2 = alpha^2 var + sigma^2`,
/// responsibilities `r_k(x_t)` follow from those, and
/// `E[x0 | x_t] = sum_k r_k (mu_k + alpha var / s^2 (x_t - alpha mu_k))`.
#[derive(Debug, Clone)]
pub struct GmmDenoiser {
    log_weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    var: f64,
}

struct Posterior {
    resp: Vec<f64>,
    /// Per-component conditional means.
    cond: Vec<Vec<f64>>,
    /// Per-component score-like terms `-(x_t - alpha mu_k) / s^2`.
    scores: Vec<Vec<f64>>,
    shrink: f64,
}

impl GmmDenoiser {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, var: f64) -> Result<Self> {
        if weights.is_empty() || means.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        crate::error::check_len(weights.len(), means.len())?;
        if !(var > 0.0 && var.is_finite()) {
            return Err(Error::invalid("mixture variance must be > 0"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("mixture weights must be non-negative and sum to 1"));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim || m.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("mixture means must share a non-zero dimension"));
        }
        Ok(Self { log_weights: weights.iter().map(|w| w.ln()).collect(), means, var })
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|lw| lw.exp()).collect()
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variance(&self) -> f64 {
        self.var
    }

    fn posterior(&self, x: &[f64], l: &NoiseLevel) -> Posterior {
        assert_eq!(x.len(), self.dim(), "gmm denoiser dimension mismatch");
        let s2 = l.alpha * l.alpha * self.var + l.sigma * l.sigma;
        let shrink = l.alpha * self.var / s2;
        let mut logp = Vec::with_capacity(self.means.len());
        let mut scores = Vec::with_capacity(self.means.len());
        let mut cond = Vec::with_capacity(self.means.len());
        for (lw, mu) in self.log_weights.iter().zip(&self.means) {
            let diff: Vec<f64> = x.iter().zip(mu).map(|(xi, m)| xi - l.alpha * m).collect();
            let d2: f64 = diff.iter().map(|d| d * d).sum();
            logp.push(lw - 0.5 * d2 / s2);
            cond.push(mu.iter().zip(&diff).map(|(m, d)| m + shrink * d).collect());
            scores.push(diff.iter().map(|d| -d / s2).collect());
        }
        let mx = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut resp: Vec<f64> = logp.iter().map(|lp| (lp - mx).exp()).collect();
        let z: f64 = resp.iter().sum();
        resp.iter_mut().for_each(|r| *r /= z);
        Posterior { resp, cond, scores, shrink }
    }

    /// Exact `E[x0 | x_t]`.
    pub fn posterior_mean(&self, x_t: &[f64], l: &NoiseLevel) -> Vec<f64> {
        let p = self.posterior(x_t, l);
        mix(&p.resp, &p.cond)
    }

    /// Posterior component responsibilities given `x_t`.
    pub fn responsibilities(&self, x_t: &[f64], l: &NoiseLevel) -> Vec<f64> {
        self.posterior(x_t, l).resp
    }
}

fn mix(resp: &[f64], vecs: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; vecs[0].len()];
    for (r, v) in resp.iter().zip(vecs) {
        for (o, vi) in out.iter_mut().zip(v) {
            *o += r * vi;
        }
    }
    out
}

impl Denoiser for GmmDenoiser {
    fn supports_len(&self, len: usize) -> bool {
        len == self.dim()
    }

    fn predict_v(&self, x_t: &[f64], level: &NoiseLevel) -> Vec<f64> {
        assert!(level.sigma > 0.0, "predict_v requires sigma_t > 0");
        v_from_x0(x_t, &self.posterior_mean(x_t, level), level)
    }

    fn predict_x0(&self, x_t: &[f64], level: &NoiseLevel) -> Vec<f64> {
        self.posterior_mean(x_t, level)
    }

    // J_x0 = shrink I + sum_k r_k c_k (g_k - g_bar)^T, so J_x0^T u = shrink u + sum_k r_k (c_k.u)(g_k - g_bar).
    fn vjp(&self, x_t: &[f64], level: &NoiseLevel, cotangent: &[f64]) -> Vec<f64> {
        assert!(level.sigma > 0.0, "vjp requires sigma_t > 0");
        let p = self.posterior(x_t, level);
        let g_bar = mix(&p.resp, &p.scores);
        let mut jt_u: Vec<f64> = cotangent.iter().map(|u| p.shrink * u).collect();
        for ((r, c), g) in p.resp.iter().zip(&p.cond).zip(&p.scores) {
            let cu: f64 = c.iter().zip(cotangent).map(|(a, b)| a * b).sum();
            for ((o, gi), gb) in jt_u.iter_mut().zip(g).zip(&g_bar) {
                *o += r * cu * (gi - gb);
            }
        }
        // v = (alpha x - x0_hat) / sigma
        cotangent.iter().zip(jt_u).map(|(u, ju)| (level.alpha * u - ju) / level.sigma).collect()
    }
}
