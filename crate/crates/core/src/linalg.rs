//! Small dense vector helpers and symmetric eigen-decompositions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `a * x + b * y` elementwise.
pub fn lincomb(a: f64, x: &[f64], b: f64, y: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(xi, yi)| a * xi + b * yi).collect()
}

pub fn sub(x: &[f64], y: &[f64]) -> Vec<f64> {
    lincomb(1.0, x, -1.0, y)
}

pub fn scale(a: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| a * v).collect()
}

/// Eigen-decomposition of a symmetric matrix, `m = U diag(values) U^T`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    /// The input is symmetrised as `(m + m^T) / 2` first.
    pub fn new(m: &DMatrix<f64>) -> Self {
        let sym = (m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        Self { values: eig.eigenvalues, vectors: eig.eigenvectors }
    }

    /// Rebuild `U diag(f(values)) U^T`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d = DVector::from_iterator(self.values.len(), self.values.iter().map(|&v| f(v)));
        let scaled = &self.vectors * DMatrix::from_diagonal(&d);
        let out = scaled * self.vectors.transpose();
        (&out + out.transpose()) * 0.5
    }

    /// Number of eigenvalues below `-tol`.
    pub fn count_negative(&self, tol: f64) -> usize {
        self.values.iter().filter(|&&v| v < -tol).count()
    }
}

/// Principal square root of a symmetric PSD matrix; negative eigenvalues are clamped to 0.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let eig = SymEigen::new(m);
    let neg = eig.count_negative(0.0);
    (eig.map(|v| v.max(0.0).sqrt()), neg)
}
