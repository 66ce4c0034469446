use nalgebra::{DMatrix, DVector};

use super::{v_from_x0, Denoiser};
use crate::linalg::SymEigen;
use crate::schedule::NoiseLevel;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub enum Covariance {
    /// Per-coordinate variances.
    Diagonal(Vec<f64>),
    /// Dense symmetric positive semi-definite matrix.
    Full(DMatrix<f64>),
}

/// `N(mean, covariance)` data distribution.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    mean: Vec<f64>,
    cov: Covariance,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, cov: Covariance) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::invalid("gaussian prior needs dimension >= 1"));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("gaussian prior mean must be finite"));
        }
        match &cov {
            Covariance::Diagonal(d) => {
                crate::error::check_len(n, d.len())?;
                if d.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::invalid("diagonal variances must be finite and >= 0"));
                }
            }
            Covariance::Full(m) => {
                if m.nrows() != n || m.ncols() != n {
                    return Err(Error::invalid(format!("covariance is {}x{}, expected {n}x{n}", m.nrows(), m.ncols())));
                }
                let scale = m.amax().max(1.0);
                if (m - m.transpose()).amax() > 1e-10 * scale {
                    return Err(Error::invalid("covariance is not symmetric"));
                }
                if SymEigen::new(m).count_negative(1e-10 * scale) > 0 {
                    return Err(Error::invalid("covariance is not positive semi-definite"));
                }
            }
        }
        Ok(Self { mean, cov })
    }

    /// Stationary AR(1) process: `cov[i][j] = variance * rho^|i-j|`.
    pub fn ar1(n: usize, rho: f64, variance: f64) -> Result<Self> {
        if !(rho.abs() < 1.0) || !(variance > 0.0) {
            return Err(Error::invalid("ar1 prior needs |rho| < 1 and variance > 0"));
        }
        let cov = DMatrix::from_fn(n, n, |i, j| variance * rho.powi(i.abs_diff(j) as i32));
        Self::new(vec![0.0; n], Covariance::Full(cov))
    }

    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, Covariance::Diagonal(vec![variance; n]))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Covariance {
        &self.cov
    }

    /// Dense copy of the covariance.
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        match &self.cov {
            Covariance::Diagonal(d) => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
            Covariance::Full(m) => m.clone(),
        }
    }
}

/// Exact denoiser for a Gaussian prior.
///
/// The posterior mean is `m + alpha S (alpha^2 S + sigma^2 I)^{-1} (x_t - alpha m)`. `S` is
/// factored once as `U diag(lambda) U^T`, so for every `t` the gain is
/// `U diag(alpha lambda / (alpha^2 lambda + sigma^2)) U^T`.
#[derive(Debug, Clone)]
pub struct GaussianDenoiser {
    mean: Vec<f64>,
    factor: Factor,
}

#[derive(Debug, Clone)]
enum Factor {
    Diagonal(Vec<f64>),
    Eigen { values: Vec<f64>, vectors: DMatrix<f64> },
}

impl GaussianDenoiser {
    pub fn new(prior: &GaussianPrior) -> Self {
        let factor = match &prior.cov {
            Covariance::Diagonal(d) => Factor::Diagonal(d.clone()),
            Covariance::Full(m) => {
                let eig = SymEigen::new(m);
                Factor::Eigen { values: eig.values.iter().map(|v| v.max(0.0)).collect(), vectors: eig.vectors }
            }
        };
        Self { mean: prior.mean.clone(), factor }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Apply the symmetric gain `alpha S (alpha^2 S + sigma^2 I)^{-1}` to `u`.
    fn apply_gain(&self, u: &[f64], l: &NoiseLevel) -> Vec<f64> {
        let (a, s2) = (l.alpha, l.sigma * l.sigma);
        let gain = |lam: f64| {
            let den = a * a * lam + s2;
            if den == 0.0 {
                // t = 0 with a degenerate direction; the posterior mean is x_t itself.
                1.0
            } else {
                a * lam / den
            }
        };
        match &self.factor {
            Factor::Diagonal(d) => u.iter().zip(d).map(|(ui, &lam)| gain(lam) * ui).collect(),
            Factor::Eigen { values, vectors } => {
                let uv = DVector::from_column_slice(u);
                let mut coeffs = vectors.tr_mul(&uv);
                for (c, &lam) in coeffs.iter_mut().zip(values) {
                    *c *= gain(lam);
                }
                (vectors * coeffs).as_slice().to_vec()
            }
        }
    }

    /// Exact `E[x0 | x_t]`.
    pub fn posterior_mean(&self, x_t: &[f64], l: &NoiseLevel) -> Vec<f64> {
        assert_eq!(x_t.len(), self.mean.len(), "gaussian denoiser dimension mismatch");
        let centred: Vec<f64> = x_t.iter().zip(&self.mean).map(|(x, m)| x - l.alpha * m).collect();
        let g = self.apply_gain(&centred, l);
        self.mean.iter().zip(g).map(|(m, gi)| m + gi).collect()
    }
}

impl Denoiser for GaussianDenoiser {
    fn supports_len(&self, len: usize) -> bool {
        len == self.mean.len()
    }

    fn predict_v(&self, x_t: &[f64], level: &NoiseLevel) -> Vec<f64> {
        assert!(level.sigma > 0.0, "predict_v requires sigma_t > 0");
        v_from_x0(x_t, &self.posterior_mean(x_t, level), level)
    }

    fn predict_x0(&self, x_t: &[f64], level: &NoiseLevel) -> Vec<f64> {
        self.posterior_mean(x_t, level)
    }

    // dv/dx = (alpha I - G) / sigma with G symmetric.
    fn vjp(&self, x_t: &[f64], level: &NoiseLevel, cotangent: &[f64]) -> Vec<f64> {
        assert!(level.sigma > 0.0, "vjp requires sigma_t > 0");
        assert_eq!(x_t.len(), cotangent.len());
        let g = self.apply_gain(cotangent, level);
        cotangent.iter().zip(g).map(|(c, gc)| (level.alpha * c - gc) / level.sigma).collect()
    }
}
