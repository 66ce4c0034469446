//! Evaluation metrics: Fréchet distance between embedding Gaussians, class-space KL,
//! log-mel reconstruction distance and the k-NN realism score.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::check_len;
use crate::linalg::{sqrtm_psd, SymEigen};
use crate::measure::{MeasurementOp, BCE_EPS};
use crate::par::Parallelism;
use crate::{Error, Result, Signal};

pub const METRICS_CSV_HEADER: &str = "task,metric,value,n_samples,seed";

/// Sample mean and unbiased covariance of a set of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

pub fn embedding_stats(embeddings: &[Vec<f64>]) -> Result<EmbeddingStats> {
    if embeddings.len() < 2 {
        return Err(Error::invalid("embedding statistics need at least two vectors"));
    }
    let d = embeddings[0].len();
    if d == 0 || embeddings.iter().any(|e| e.len() != d) {
        return Err(Error::invalid("embeddings must share a non-zero dimension"));
    }
    let n = embeddings.len();
    let mut mean = DVector::zeros(d);
    for e in embeddings {
        mean += DVector::from_column_slice(e);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for e in embeddings {
        let c = DVector::from_column_slice(e) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (n - 1) as f64;
    Ok(EmbeddingStats { mean, cov, count: n })
}

impl EmbeddingStats {
    /// Statistics of the union of the two underlying sets.
    pub fn merge(&self, other: &EmbeddingStats) -> Result<EmbeddingStats> {
        check_len(self.mean.len(), other.mean.len())?;
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        let mean = &self.mean + &delta * (nb / n);
        // Co-moment sums add, plus the between-set correction.
        let m2 = &self.cov * (na - 1.0) + &other.cov * (nb - 1.0) + (&delta * delta.transpose()) * (na * nb / n);
        Ok(EmbeddingStats { mean, cov: m2 / (n - 1.0), count: self.count + other.count })
    }
}

/// `||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a^{1/2} S_b S_a^{1/2})^{1/2})`.
pub fn frechet_distance(a: &EmbeddingStats, b: &EmbeddingStats) -> Result<f64> {
    check_len(a.mean.len(), b.mean.len())?;
    let diff = (&a.mean - &b.mean).norm_squared();
    let (root_a, neg) = sqrtm_psd(&a.cov);
    let inner = SymEigen::new(&(&root_a * &b.cov * &root_a));
    let neg = neg + inner.count_negative(0.0);
    if neg > 0 {
        log::warn!("frechet_distance: clamped {neg} negative eigenvalue(s) to zero");
    }
    let tr_cross: f64 = inner.values.iter().map(|v| v.max(0.0).sqrt()).sum();
    Ok((diff + a.cov.trace() + b.cov.trace() - 2.0 * tr_cross).max(0.0))
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Bernoulli `KL(p || q)` with `0 ln 0 = 0`. `q` is moved `BCE_EPS` off 0 or 1 only when
/// that endpoint would carry non-zero mass under `p`; otherwise it is used as given.
pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let q = if (q == 0.0 && p > 0.0) || (q == 1.0 && p < 1.0) { q.clamp(BCE_EPS, 1.0 - BCE_EPS) } else { q };
    (xlogy(p, p) - xlogy(p, q) + xlogy(1.0 - p, 1.0 - p) - xlogy(1.0 - p, 1.0 - q)).max(0.0)
}

/// Mean over paired samples and classes of per-class Bernoulli KL divergences.
pub fn class_kld(p_set: &[Vec<f64>], q_set: &[Vec<f64>]) -> Result<f64> {
    if p_set.is_empty() {
        return Err(Error::invalid("class_kld needs at least one pair"));
    }
    check_len(p_set.len(), q_set.len())?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, q) in p_set.iter().zip(q_set) {
        check_len(p.len(), q.len())?;
        if p.iter().chain(q).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("class probabilities must lie in [0, 1]"));
        }
        total += p.iter().zip(q).map(|(a, b)| bernoulli_kl(*a, *b)).sum::<f64>();
        count += p.len();
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub mel_bands: usize,
    pub sample_rate: u32,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self { fft_size: 1024, hop: 256, mel_bands: 64, sample_rate: 16_000, log_floor: 1e-5 }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || self.hop == 0 || self.hop > self.fft_size || self.mel_bands == 0 {
            return Err(Error::invalid(format!("invalid mel configuration {self:?}")));
        }
        if self.sample_rate == 0 || !(self.log_floor > 0.0) {
            return Err(Error::invalid("mel configuration needs a sample rate and a positive log floor"));
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

/// Triangular HTK-style filters over `[0, sr/2]`, `bands x (fft_size/2 + 1)`.
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let bins = cfg.fft_size / 2 + 1;
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> =
        (0..cfg.mel_bands + 2).map(|i| mel_to_hz(top * i as f64 / (cfg.mel_bands + 1) as f64)).collect();
    (0..cfg.mel_bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * cfg.sample_rate as f64 / cfg.fft_size as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Reusable log-mel analyser.
pub struct MelSpectrogram {
    cfg: MelConfig,
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MelSpectrogram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelSpectrogram").field("cfg", &self.cfg).finish()
    }
}

impl MelSpectrogram {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self { window: hann(cfg.fft_size), filters: mel_filterbank(&cfg), fft, cfg })
    }

    /// Number of frames: `floor((len - fft) / hop) + 1`; shorter inputs are zero-padded to one frame.
    pub fn frame_count(&self, len: usize) -> usize {
        if len <= self.cfg.fft_size {
            1
        } else {
            (len - self.cfg.fft_size) / self.cfg.hop + 1
        }
    }

    /// `log10(max(mel power, floor))`, one row of `mel_bands` per frame.
    pub fn log_mel(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n = self.cfg.fft_size;
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        (0..self.frame_count(x.len()))
            .map(|f| {
                let start = f * self.cfg.hop;
                for (i, c) in buf.iter_mut().enumerate() {
                    let v = x.get(start + i).copied().unwrap_or(0.0);
                    *c = Complex::new(v * self.window[i], 0.0);
                }
                self.fft.process(&mut buf);
                let power: Vec<f64> = buf[..n / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
                self.filters
                    .iter()
                    .map(|filt| {
                        let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
                        e.max(self.cfg.log_floor).log10()
                    })
                    .collect()
            })
            .collect()
    }

    /// Mean absolute difference of the log-mel spectrograms of `a` and `b`.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        check_len(a.len(), b.len())?;
        let (ma, mb) = (self.log_mel(a), self.log_mel(b));
        let mut total = 0.0;
        let mut count = 0usize;
        for (ra, rb) in ma.iter().zip(&mb) {
            for (x, y) in ra.iter().zip(rb) {
                total += (x - y).abs();
                count += 1;
            }
        }
        Ok(total / count as f64)
    }
}

pub fn mel_reconstruction_distance(a: &Signal, b: &Signal, cfg: &MelConfig) -> Result<f64> {
    if a.sample_rate() != b.sample_rate() {
        return Err(Error::invalid("signals have different sample rates"));
    }
    MelSpectrogram::new(*cfg)?.distance(a.samples(), b.samples())
}

/// Reference embeddings with their k-th nearest-neighbour radii.
#[derive(Debug, Clone)]
pub struct RealismReference {
    points: Vec<Vec<f64>>,
    radii: Vec<f64>,
}

pub const REALISM_DENOM_FLOOR: f64 = 1e-9;

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl RealismReference {
    pub fn new(points: Vec<Vec<f64>>, k: usize, parallelism: Parallelism) -> Result<Self> {
        if k == 0 || points.len() <= k {
            return Err(Error::invalid(format!(
                "realism needs reference size > k >= 1 (size {}, k {k})",
                points.len()
            )));
        }
        let d = points[0].len();
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::invalid("reference embeddings must share a dimension"));
        }
        let radii = parallelism.map_indexed(points.len(), |i| {
            let mut dists: Vec<f64> =
                points.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, q)| euclid(&points[i], q)).collect();
            let (_, kth, _) = dists.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        });
        Ok(Self { points, radii })
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// `max_r radius_r / ||query - phi_r||`, denominators floored at [`REALISM_DENOM_FLOOR`].
    pub fn score(&self, query: &[f64]) -> Result<f64> {
        check_len(self.points[0].len(), query.len())?;
        let mut best = 0.0f64;
        let mut floored = false;
        for (p, r) in self.points.iter().zip(&self.radii) {
            let mut d = euclid(query, p);
            if d < REALISM_DENOM_FLOOR {
                d = REALISM_DENOM_FLOOR;
                floored = true;
            }
            best = best.max(r / d);
        }
        if floored {
            log::warn!("realism_score: query coincides with a reference point; denominator floored");
        }
        Ok(best)
    }
}

pub fn realism_score(query: &[f64], reference_set: &[Vec<f64>], k: usize) -> Result<f64> {
    RealismReference::new(reference_set.to_vec(), k, Parallelism::Sequential)?.score(query)
}

/// Mean of `embedder` over consecutive windows of its input length (hop = `hop`).
pub fn embed_signal(embedder: &dyn MeasurementOp, x: &[f64], hop: usize) -> Result<Vec<f64>> {
    let w = embedder.input_len();
    if x.len() < w || hop == 0 {
        return Err(Error::invalid(format!("signal of {} samples too short for embedder window {w}", x.len())));
    }
    let frames = (x.len() - w) / hop + 1;
    let mut acc = vec![0.0; embedder.output_len()];
    for f in 0..frames {
        for (a, e) in acc.iter_mut().zip(embedder.apply(&x[f * hop..f * hop + w])) {
            *a += e;
        }
    }
    acc.iter_mut().for_each(|a| *a /= frames as f64);
    Ok(acc)
}

/// Realism of `generated` divided by the realism of the plain crossfade of the same pair.
pub fn normalized_transition_realism(
    generated: &Signal,
    crossfade_baseline: &Signal,
    reference: &RealismReference,
    embedder: &dyn MeasurementOp,
    hop: usize,
) -> Result<f64> {
    check_len(generated.len(), crossfade_baseline.len())?;
    let g = reference.score(&embed_signal(embedder, generated.samples(), hop)?)?;
    let b = reference.score(&embed_signal(embedder, crossfade_baseline.samples(), hop)?)?;
    if b == 0.0 {
        return Err(Error::invalid("crossfade baseline has zero realism; ratio undefined"));
    }
    Ok(g / b)
}

/// Per-window mel distance between `generated` and `track_a`: `(window centre in seconds, distance)`.
pub fn transition_mel_curve(
    generated: &Signal,
    track_a: &Signal,
    window: usize,
    hop: usize,
    cfg: &MelConfig,
) -> Result<Vec<(f64, f64)>> {
    check_len(generated.len(), track_a.len())?;
    if window == 0 || hop == 0 || window > generated.len() {
        return Err(Error::invalid("curve window must be in [1, len] and hop >= 1"));
    }
    let mel = MelSpectrogram::new(*cfg)?;
    let rate = generated.sample_rate().max(1) as f64;
    let frames = (generated.len() - window) / hop + 1;
    (0..frames)
        .map(|f| {
            let r = f * hop..f * hop + window;
            let d = mel.distance(&generated.samples()[r.clone()], &track_a.samples()[r])?;
            Ok(((f * hop) as f64 / rate + window as f64 / (2.0 * rate), d))
        })
        .collect()
}

pub fn write_curve_csv<W: Write>(curve: &[(f64, f64)], mut w: W) -> std::io::Result<()> {
    writeln!(w, "time_s,distance")?;
    for (t, d) in curve {
        writeln!(w, "{t},{d}")?;
    }
    Ok(())
}

/// Average ranks (1-based) with ties sharing the mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.len() < 2 {
        return Err(Error::invalid("spearman needs at least two points"));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    Ok(cov / (va * vb).sqrt())
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub task: String,
    pub metric: String,
    pub value: f64,
    pub n_samples: usize,
    pub seed: u64,
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{METRICS_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.task, r.metric, r.value, r.n_samples, r.seed)?;
    }
    Ok(())
}

/// `mean ± std` (sample standard deviation) for table-style reporting.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn stats_from_diag(mean: &[f64], var: &[f64]) -> EmbeddingStats {
        EmbeddingStats {
            mean: DVector::from_column_slice(mean),
            cov: DMatrix::from_diagonal(&DVector::from_column_slice(var)),
            count: 10,
        }
    }

    #[test]
    fn embedding_stats_examples() {
        let same = embedding_stats(&vec![vec![1.0, 2.0]; 5]).unwrap();
        assert!(same.cov.iter().all(|v| *v == 0.0));
        let sym = embedding_stats(&[vec![1.0, -3.0], vec![-1.0, 3.0]]).unwrap();
        assert!(sym.mean.iter().all(|v| *v == 0.0));
        let sq = embedding_stats(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(sq.mean.as_slice(), &[1.0, 1.0]);
        assert!((sq.cov[(0, 0)] - 4.0 / 3.0).abs() < 1e-15);
        assert!((sq.cov[(1, 1)] - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(sq.cov[(0, 1)], 0.0);
        assert!(embedding_stats(&[vec![1.0]]).is_err());
    }

    #[test]
    fn merge_matches_pooled() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let all: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        let pooled = embedding_stats(&all).unwrap();
        let merged = embedding_stats(&all[..11]).unwrap().merge(&embedding_stats(&all[11..]).unwrap()).unwrap();
        assert_eq!(merged.count, 30);
        assert!((merged.mean - pooled.mean).amax() < 1e-12);
        assert!((merged.cov - pooled.cov).amax() < 1e-12);
    }

    #[test]
    fn frechet_examples() {
        let a = stats_from_diag(&[0.0, 0.0], &[1.0, 1.0]);
        let b = stats_from_diag(&[3.0, 4.0], &[1.0, 1.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 25.0).abs() < 1e-12);
        assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-12);

        let (m1, v1): ([f64; 3], [f64; 3]) = ([0.5, -1.0, 2.0], [0.3, 2.0, 1.1]);
        let (m2, v2): ([f64; 3], [f64; 3]) = ([0.0, 1.0, 2.5], [1.7, 0.4, 1.1]);
        let closed: f64 = (0..3).map(|i| (m1[i] - m2[i]).powi(2) + (v1[i].sqrt() - v2[i].sqrt()).powi(2)).sum();
        let fd = frechet_distance(&stats_from_diag(&m1, &v1), &stats_from_diag(&m2, &v2)).unwrap();
        assert!((fd - closed).abs() < 1e-8);
    }

    fn random_stats(rng: &mut ChaCha8Rng, d: usize) -> EmbeddingStats {
        let pts: Vec<Vec<f64>> = (0..d + 5).map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect()).collect();
        embedding_stats(&pts).unwrap()
    }

    #[test]
    fn frechet_symmetric_and_zero_on_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let a = random_stats(&mut rng, 4);
            let b = random_stats(&mut rng, 4);
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-8, "{ab} vs {ba}");
            assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn kld_examples() {
        assert_eq!(class_kld(&[vec![0.3, 0.9]], &[vec![0.3, 0.9]]).unwrap(), 0.0);
        assert!((class_kld(&[vec![1.0]], &[vec![0.5]]).unwrap() - std::f64::consts::LN_2).abs() < 1e-10);
        assert!(class_kld(&[vec![1.2]], &[vec![0.5]]).is_err());
        assert_eq!(class_kld(&[vec![0.0, 1.0]], &[vec![0.0, 1.0]]).unwrap(), 0.0);
        let saturated = class_kld(&[vec![1.0]], &[vec![0.0]]).unwrap();
        assert!((saturated + BCE_EPS.ln()).abs() < 1e-9);
        assert!(class_kld(&[vec![1.0]], &[]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        use rand::Rng;
        for _ in 0..1000 {
            let p = vec![rng.random::<f64>(), rng.random::<f64>()];
            let q = vec![rng.random::<f64>(), rng.random::<f64>()];
            assert!(class_kld(std::slice::from_ref(&p), &[q]).unwrap() >= 0.0);
            assert!(class_kld(std::slice::from_ref(&p), std::slice::from_ref(&p)).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn mel_distance_zero_cases() {
        let cfg = MelConfig { sample_rate: 8000, fft_size: 256, hop: 64, mel_bands: 32, log_floor: 1e-5 };
        let rate = 8000;
        let sine = Signal::new((0..4000).map(|i| (i as f64 * 0.1).sin()).collect(), rate).unwrap();
        assert_eq!(mel_reconstruction_distance(&sine, &sine, &cfg).unwrap(), 0.0);
        let silence = Signal::zeros(4000, rate).unwrap();
        assert_eq!(mel_reconstruction_distance(&silence, &silence, &cfg).unwrap(), 0.0);
        assert!(mel_reconstruction_distance(&sine, &silence, &cfg).unwrap() > 0.0);
    }

    /// Independent log-mel: direct O(n^2) DFT per frame, filters evaluated inline.
    fn naive_log_mel(x: &[f64], cfg: &MelConfig) -> Vec<Vec<f64>> {
        use std::f64::consts::PI;
        let n = cfg.fft_size;
        let frames = if x.len() <= n { 1 } else { (x.len() - n) / cfg.hop + 1 };
        let fmax_mel = 2595.0 * (1.0 + (cfg.sample_rate as f64 / 2.0) / 700.0).log10();
        let hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
        (0..frames)
            .map(|f| {
                let frame: Vec<f64> = (0..n)
                    .map(|i| {
                        let w = 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos());
                        x.get(f * cfg.hop + i).copied().unwrap_or(0.0) * w
                    })
                    .collect();
                let power: Vec<f64> = (0..=n / 2)
                    .map(|k| {
                        let (mut re, mut im) = (0.0, 0.0);
                        for (i, v) in frame.iter().enumerate() {
                            let ang = -2.0 * PI * (k * i % n) as f64 / n as f64;
                            re += v * ang.cos();
                            im += v * ang.sin();
                        }
                        re * re + im * im
                    })
                    .collect();
                (0..cfg.mel_bands)
                    .map(|b| {
                        let step = fmax_mel / (cfg.mel_bands + 1) as f64;
                        let (lo, mid, hi) = (hz(step * b as f64), hz(step * (b + 1) as f64), hz(step * (b + 2) as f64));
                        let mut e = 0.0;
                        for (k, p) in power.iter().enumerate() {
                            let fr = k as f64 * cfg.sample_rate as f64 / n as f64;
                            let w = if fr > lo && fr <= mid {
                                (fr - lo) / (mid - lo)
                            } else if fr > mid && fr < hi {
                                (hi - fr) / (hi - mid)
                            } else {
                                0.0
                            };
                            e += w * p;
                        }
                        e.max(cfg.log_floor).log10()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn mel_distance_matches_naive_dft() {
        let rate = 16_000u32;
        let cfg = MelConfig { sample_rate: rate, fft_size: 512, hop: 256, mel_bands: 40, log_floor: 1e-5 };
        let tone = |f: f64| {
            Signal::new(
                (0..rate as usize).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / rate as f64).sin()).collect(),
                rate,
            )
            .unwrap()
        };
        let (a, b) = (tone(440.0), tone(880.0));
        let d = mel_reconstruction_distance(&a, &b, &cfg).unwrap();
        let (na, nb) = (naive_log_mel(a.samples(), &cfg), naive_log_mel(b.samples(), &cfg));
        let mut total = 0.0;
        let mut count = 0;
        for (ra, rb) in na.iter().zip(&nb) {
            for (x, y) in ra.iter().zip(rb) {
                total += (x - y).abs();
                count += 1;
            }
        }
        let oracle = total / count as f64;
        assert!(d > 0.0);
        assert!((d - oracle).abs() < 1e-6, "{d} vs {oracle}");
    }

    /// Direct evaluation: sort every row of the distance matrix.
    fn brute_realism(q: &[f64], refs: &[Vec<f64>], k: usize) -> f64 {
        let mut best = 0.0f64;
        for (i, r) in refs.iter().enumerate() {
            let mut ds: Vec<f64> =
                refs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, o)| euclid(r, o)).collect();
            ds.sort_by(f64::total_cmp);
            best = best.max(ds[k - 1] / euclid(q, r).max(REALISM_DENOM_FLOOR));
        }
        best
    }

    #[test]
    fn realism_matches_brute_force() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..20 {
            let n = 5 + trial % 7;
            let refs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
            let q = vec![rng.random::<f64>() * 2.0, rng.random::<f64>() * 2.0];
            let k = 1 + trial % 3;
            assert_eq!(realism_score(&q, &refs, k).unwrap(), brute_realism(&q, &refs, k));
        }
    }

    #[test]
    fn realism_far_query_and_scale_invariance() {
        let refs = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        assert!(realism_score(&[1e6, 1e6], &refs, 1).unwrap() < 1e-5);
        let q = [0.3, 0.8];
        let base = realism_score(&q, &refs, 2).unwrap();
        let c = 7.5;
        let scaled: Vec<Vec<f64>> = refs.iter().map(|r| r.iter().map(|v| v * c).collect()).collect();
        let s = realism_score(&[q[0] * c, q[1] * c], &scaled, 2).unwrap();
        assert!((s - base).abs() < 1e-12 * base);
        assert!(realism_score(&q, &refs, 4).is_err());
        assert!(realism_score(&[0.0, 0.0], &refs, 1).unwrap() >= 1e8);
    }

    #[test]
    fn normalized_realism_is_one_on_baseline() {
        let emb = crate::measure::ToyEmbedder::new(1, 16, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let refs: Vec<Vec<f64>> = (0..10)
            .map(|_| {
                let x: Vec<f64> = (0..64).map(|_| StandardNormal.sample(&mut rng)).collect();
                embed_signal(&emb, &x, 8).unwrap()
            })
            .collect();
        let reference = RealismReference::new(refs, 2, Parallelism::Sequential).unwrap();
        let x = Signal::from_vec((0..64).map(|i| (i as f64 * 0.2).sin()).collect()).unwrap();
        assert_eq!(normalized_transition_realism(&x, &x, &reference, &emb, 8).unwrap(), 1.0);
        let y = Signal::from_vec((0..64).map(|i| (i as f64 * 0.5).cos()).collect()).unwrap();
        assert!(normalized_transition_realism(&y, &x, &reference, &emb, 8).unwrap() > 0.0);
    }

    #[test]
    fn curve_window_count_and_identity() {
        let cfg = MelConfig { sample_rate: 8000, fft_size: 256, hop: 128, mel_bands: 16, log_floor: 1e-5 };
        let a = Signal::new((0..5000).map(|i| (i as f64 * 0.3).sin()).collect(), 8000).unwrap();
        let curve = transition_mel_curve(&a, &a, 1024, 300, &cfg).unwrap();
        assert_eq!(curve.len(), (5000 - 1024) / 300 + 1);
        assert!(curve.iter().all(|(_, d)| *d == 0.0));
        assert!((curve[0].0 - 512.0 / 8000.0).abs() < 1e-15);
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn metrics_csv_format() {
        let rows = vec![MetricRow { task: "infill".into(), metric: "mr".into(), value: 0.5, n_samples: 4, seed: 7 }];
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "task,metric,value,n_samples,seed\ninfill,mr,0.5,4,7\n");
    }

    proptest! {
        #[test]
        fn mel_distance_symmetric(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = MelConfig { sample_rate: 8000, fft_size: 128, hop: 64, mel_bands: 16, log_floor: 1e-5 };
            let a: Vec<f64> = (0..600).map(|_| StandardNormal.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..600).map(|_| StandardNormal.sample(&mut rng)).collect();
            let m = MelSpectrogram::new(cfg).unwrap();
            prop_assert!((m.distance(&a, &b).unwrap() - m.distance(&b, &a).unwrap()).abs() < 1e-12);
        }
    }
}
