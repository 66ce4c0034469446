//! Measurement operators, distances, crossfades and the data-consistency projection.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::check_len;
use crate::{Error, Result, Signal};

/// Probability clamp used by the binary cross-entropy distance.
pub const BCE_EPS: f64 = 1e-7;

/// A differentiable map from a sample to an observation.
pub trait MeasurementOp: Send + Sync + fmt::Debug {
    /// Required length of the input sample.
    fn input_len(&self) -> usize;

    fn output_len(&self) -> usize;

    fn apply(&self, x: &[f64]) -> Vec<f64>;

    /// `J(x)^T cotangent`, where `J` is the Jacobian of [`apply`](Self::apply) at `x`.
    fn vjp(&self, x: &[f64], cotangent: &[f64]) -> Vec<f64>;

    /// The row-selection structure when the operator is a linear mask.
    fn as_mask(&self) -> Option<&LinearMask> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    LeftContext,
    RightContext,
    InfillUnion,
}

/// Row-selection operator keeping the first `left` and the last `right` samples of `n`.
///
/// Rows of `A` are distinct unit vectors, so `A A^T = I` and the data-consistency
/// projection reduces to replacing the selected coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearMask {
    kind: MaskKind,
    left: usize,
    right: usize,
    n: usize,
}

impl LinearMask {
    pub fn left_context(left: usize, n: usize) -> Result<Self> {
        Self::new(MaskKind::LeftContext, left, 0, n)
    }

    pub fn right_context(right: usize, n: usize) -> Result<Self> {
        Self::new(MaskKind::RightContext, 0, right, n)
    }

    pub fn infill_union(left: usize, right: usize, n: usize) -> Result<Self> {
        Self::new(MaskKind::InfillUnion, left, right, n)
    }

    fn new(kind: MaskKind, left: usize, right: usize, n: usize) -> Result<Self> {
        let ok = match kind {
            MaskKind::LeftContext => left >= 1 && right == 0,
            MaskKind::RightContext => right >= 1 && left == 0,
            MaskKind::InfillUnion => left >= 1 && right >= 1,
        };
        if !ok || left + right >= n {
            return Err(Error::invalid(format!(
                "invalid {kind:?} mask: C_L={left}, C_R={right}, n={n} (need non-empty contexts and C_L + C_R < n)"
            )));
        }
        Ok(Self { kind, left, right, n })
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn left(&self) -> usize {
        self.left
    }

    pub fn right(&self) -> usize {
        self.right
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> usize {
        self.left + self.right
    }

    /// Whether sample `i` is fixed by the measurement.
    pub fn is_selected(&self, i: usize) -> bool {
        i < self.left || i >= self.n - self.right
    }

    /// Indices of the free (unmeasured) region.
    pub fn free_range(&self) -> std::ops::Range<usize> {
        self.left..self.n - self.right
    }

    /// `A^T u`: scatter measurement values back to their sample positions.
    pub fn transpose(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.rows());
        let mut x = vec![0.0; self.n];
        x[..self.left].copy_from_slice(&u[..self.left]);
        x[self.n - self.right..].copy_from_slice(&u[self.left..]);
        x
    }
}

impl MeasurementOp for LinearMask {
    fn input_len(&self) -> usize {
        self.n
    }

    fn output_len(&self) -> usize {
        self.rows()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "mask applied to wrong length");
        let mut y = Vec::with_capacity(self.rows());
        y.extend_from_slice(&x[..self.left]);
        y.extend_from_slice(&x[self.n - self.right..]);
        y
    }

    fn vjp(&self, _x: &[f64], cotangent: &[f64]) -> Vec<f64> {
        self.transpose(cotangent)
    }

    fn as_mask(&self) -> Option<&LinearMask> {
        Some(self)
    }
}

/// Checked form of `apply` for a selection mask.
pub fn apply_mask(mask: &LinearMask, x: &[f64]) -> Result<Vec<f64>> {
    check_len(mask.n, x.len())?;
    Ok(mask.apply(x))
}

/// In-place `x + A^T (A A^T)^{-1} (y - A x)`; for a selection mask this writes `y` into
/// the selected coordinates, so `A x = y` holds bit-exactly afterwards.
pub fn project_in_place(x: &mut [f64], y: &[f64], mask: &LinearMask) {
    debug_assert_eq!(x.len(), mask.n);
    debug_assert_eq!(y.len(), mask.rows());
    let (l, r, n) = (mask.left, mask.right, mask.n);
    x[..l].copy_from_slice(&y[..l]);
    x[n - r..].copy_from_slice(&y[l..]);
}

/// Orthogonal projection of `x` onto `{x : A x = y}`.
pub fn consistency_project(x: &[f64], y: &[f64], op: &dyn MeasurementOp) -> Result<Vec<f64>> {
    let mask = op
        .as_mask()
        .ok_or_else(|| Error::contract("data consistency needs a full-row-rank linear selection operator"))?;
    check_len(mask.n, x.len())?;
    check_len(mask.rows(), y.len())?;
    let mut out = x.to_vec();
    project_in_place(&mut out, y, mask);
    Ok(out)
}

/// Constant-power fade pair: `fade_in[i]^2 + fade_out[i]^2 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossfadeSpec {
    pub fade_in: Vec<f64>,
    pub fade_out: Vec<f64>,
}

impl CrossfadeSpec {
    pub fn len(&self) -> usize {
        self.fade_in.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fade_in.is_empty()
    }
}

/// Quarter-sine fade-in and quarter-cosine fade-out over `fade_length` samples; the
/// endpoints hit exactly `(0, 1)` and `(1, 0)`. A single-sample fade sits at the midpoint.
pub fn crossfade(fade_length: usize) -> Result<CrossfadeSpec> {
    if fade_length == 0 {
        return Err(Error::invalid("crossfade needs at least one sample"));
    }
    let (fade_in, fade_out) = (0..fade_length)
        .map(|i| {
            if fade_length == 1 {
                let h = std::f64::consts::FRAC_1_SQRT_2;
                return (h, h);
            }
            if i == fade_length - 1 {
                return (1.0, 0.0);
            }
            let (s, c) = (FRAC_PI_2 * i as f64 / (fade_length - 1) as f64).sin_cos();
            (s, c)
        })
        .unzip();
    Ok(CrossfadeSpec { fade_in, fade_out })
}

/// `[A_L xL; F_out xL + F_in xR; A_R xR]` over `n = C_L + fade + C_R` samples, where
/// `xL` contributes its first `n` samples and `xR` its last `n`.
pub fn build_transition_target(
    x_left: &Signal,
    x_right: &Signal,
    left: usize,
    right: usize,
    fade_length: usize,
) -> Result<Signal> {
    let n = left + fade_length + right;
    if x_left.len() < n || x_right.len() < n {
        return Err(Error::invalid(format!(
            "transition needs {n} samples from each track, got {} and {}",
            x_left.len(),
            x_right.len()
        )));
    }
    let fade = crossfade(fade_length)?;
    let a = &x_left.samples()[..n];
    let b = &x_right.samples()[x_right.len() - n..];
    let mut out = Vec::with_capacity(n);
    out.extend_from_slice(&a[..left]);
    for i in 0..fade_length {
        let j = left + i;
        out.push(fade.fade_out[i] * a[j] + fade.fade_in[i] * b[j]);
    }
    out.extend_from_slice(&b[n - right..]);
    x_left.with_samples(out)
}

/// Distance `d(y, y_hat)` between a target measurement and a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    /// `||y - y_hat||_1`
    L1,
    /// `||y - y_hat||_2`
    L2,
    /// `||y - y_hat||_2^2`
    SquaredL2,
    /// Mean binary cross-entropy with `y_hat` clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    Bce,
}

impl Distance {
    pub fn eval(&self, y: &[f64], y_hat: &[f64]) -> f64 {
        debug_assert_eq!(y.len(), y_hat.len());
        let diffs = y.iter().zip(y_hat).map(|(a, b)| b - a);
        match self {
            Distance::L1 => diffs.map(f64::abs).sum(),
            Distance::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Distance::SquaredL2 => diffs.map(|d| d * d).sum(),
            Distance::Bce => {
                let total: f64 = y
                    .iter()
                    .zip(y_hat)
                    .map(|(&t, &p)| {
                        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                        -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                    })
                    .sum();
                total / y.len() as f64
            }
        }
    }

    /// Gradient of [`eval`](Self::eval) with respect to `y_hat`. The L1 and L2 kinks
    /// at zero use the zero subgradient.
    pub fn grad(&self, y: &[f64], y_hat: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), y_hat.len());
        match self {
            Distance::L1 => y
                .iter()
                .zip(y_hat)
                .map(|(a, b)| {
                    let d = b - a;
                    if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
            Distance::L2 => {
                let n = self.eval(y, y_hat);
                if n == 0.0 {
                    vec![0.0; y.len()]
                } else {
                    y.iter().zip(y_hat).map(|(a, b)| (b - a) / n).collect()
                }
            }
            Distance::SquaredL2 => y.iter().zip(y_hat).map(|(a, b)| 2.0 * (b - a)).collect(),
            Distance::Bce => {
                let m = y.len() as f64;
                y.iter()
                    .zip(y_hat)
                    .map(|(&t, &p)| {
                        if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                            // clamp is flat here
                            0.0
                        } else {
                            (p - t) / (p * (1.0 - p) * m)
                        }
                    })
                    .collect()
            }
        }
    }
}

fn seeded_matrix(seed: u64, rows: usize, cols: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, (1.0 / cols as f64).sqrt()).expect("valid std");
    (0..rows * cols).map(|_| dist.sample(&mut rng)).collect()
}

fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows).map(|r| w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn matvec_t(w: &[f64], rows: usize, cols: usize, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (r, &ur) in u.iter().enumerate().take(rows) {
        for (o, wi) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += ur * wi;
        }
    }
    out
}

/// `x -> tanh(W x)` with a fixed seeded Gaussian projection `W` (`emb_dim x in_dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEmbedder {
    w: Vec<f64>,
    in_dim: usize,
    emb_dim: usize,
}

impl ToyEmbedder {
    pub fn new(seed: u64, in_dim: usize, emb_dim: usize) -> Result<Self> {
        if emb_dim == 0 || emb_dim > in_dim {
            return Err(Error::invalid(format!("embedder needs 1 <= emb_dim <= in_dim, got {emb_dim} > {in_dim}")));
        }
        Ok(Self { w: seeded_matrix(seed, emb_dim, in_dim), in_dim, emb_dim })
    }
}

impl MeasurementOp for ToyEmbedder {
    fn input_len(&self) -> usize {
        self.in_dim
    }

    fn output_len(&self) -> usize {
        self.emb_dim
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim, "embedder input length");
        matvec(&self.w, self.emb_dim, self.in_dim, x).into_iter().map(f64::tanh).collect()
    }

    fn vjp(&self, x: &[f64], cotangent: &[f64]) -> Vec<f64> {
        let e = self.apply(x);
        let u: Vec<f64> = e.iter().zip(cotangent).map(|(ei, c)| c * (1.0 - ei * ei)).collect();
        matvec_t(&self.w, self.emb_dim, self.in_dim, &u)
    }
}

/// Multi-label classifier `p_i(x) = sigmoid(w_i . x + b_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyClassifier {
    w: Vec<f64>,
    b: Vec<f64>,
    in_dim: usize,
    classes: usize,
}

impl ToyClassifier {
    /// Seeded Gaussian weights scaled by `1/sqrt(in_dim)` and zero biases.
    pub fn new(seed: u64, in_dim: usize, classes: usize) -> Result<Self> {
        if classes == 0 || in_dim == 0 {
            return Err(Error::invalid("classifier needs at least one class and input"));
        }
        Ok(Self { w: seeded_matrix(seed, classes, in_dim), b: vec![0.0; classes], in_dim, classes })
    }

    pub fn from_weights(w: Vec<f64>, b: Vec<f64>, in_dim: usize) -> Result<Self> {
        let classes = b.len();
        if classes == 0 || in_dim == 0 || w.len() != classes * in_dim {
            return Err(Error::invalid("classifier weights must be classes x in_dim"));
        }
        Ok(Self { w, b, in_dim, classes })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl MeasurementOp for ToyClassifier {
    fn input_len(&self) -> usize {
        self.in_dim
    }

    fn output_len(&self) -> usize {
        self.classes
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim, "classifier input length");
        matvec(&self.w, self.classes, self.in_dim, x).into_iter().zip(&self.b).map(|(z, b)| sigmoid(z + b)).collect()
    }

    fn vjp(&self, x: &[f64], cotangent: &[f64]) -> Vec<f64> {
        let p = self.apply(x);
        let u: Vec<f64> = p.iter().zip(cotangent).map(|(pi, c)| c * pi * (1.0 - pi)).collect();
        matvec_t(&self.w, self.classes, self.in_dim, &u)
    }
}
