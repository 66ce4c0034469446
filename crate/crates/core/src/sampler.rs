//! DDPM and DDIM sampling with guidance gradients.
//!
//! Each iteration from `t` to `s`:
//!
//! 1. `x0_hat = alpha_t x_t - sigma_t v(x_t, t)`
//! 2. DDPM: `x_s = c0 x0_hat + c1 x_t + std * eps`, then `x_s -= xi * grad_{x_t} d(y, A(.))`.
//!    DDIM: `eps_hat = (x_t - alpha_t x0_hat) / sigma_t - xi sigma_t grad`, then
//!    `x_s = alpha_s x0_hat + sqrt(1 - alpha_s^2) eps_hat`.
//! 3. Optionally project `x_s` onto `{x : A x = y}`.
//!
//! The gradient is taken either through `A(x_t)` directly or through the denoised
//! estimate `A(x0_hat(x_t))`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::denoise::Denoiser;
use crate::linalg::norm;
use crate::measure::project_in_place;
use crate::par::Parallelism;
use crate::schedule::{cosine_level, DdpmCoefficients, NoiseLevel, TimestepGrid, DEFAULT_T_MAX, DEFAULT_T_MIN};
use crate::tasks::TaskSpec;
use crate::{Error, Result, Signal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Ddpm,
    Ddim,
}

/// Where the measurement loss is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradTarget {
    /// `d(y, A(x_t))`
    Direct,
    /// `d(y, A(x0_hat(x_t)))`
    Denoised,
}

/// Where the DDPM sampler applies `-xi * grad`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidancePlacement {
    /// Gradient taken at `x_t`, subtracted from `x_s` after the posterior step.
    #[default]
    AfterPosterior,
    /// Gradient step applied to `x_t` before it is denoised (ablation).
    BeforePosterior,
}

/// Latent-model guidance step size.
pub const XI_LATENT: f64 = 3e-2;
/// Waveform-model guidance step size.
pub const XI_WAVEFORM: f64 = 3e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub xi: f64,
    pub grad_target: GradTarget,
    pub data_consistency: bool,
    pub steps: usize,
    pub sampler: SamplerKind,
    pub seed: u64,
    #[serde(default)]
    pub placement: GuidancePlacement,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default)]
    pub t_min: f64,
    /// Keep a copy of `x0_hat` every this many steps in the trace.
    #[serde(default)]
    pub snapshot_every: Option<usize>,
}

fn default_t_max() -> f64 {
    DEFAULT_T_MAX
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            xi: XI_WAVEFORM,
            grad_target: GradTarget::Direct,
            data_consistency: false,
            steps: 50,
            sampler: SamplerKind::Ddpm,
            seed: 0,
            placement: GuidancePlacement::AfterPosterior,
            t_max: DEFAULT_T_MAX,
            t_min: DEFAULT_T_MIN,
            snapshot_every: None,
        }
    }
}

impl GuidanceConfig {
    /// Check the configuration against a task and a denoiser before sampling.
    pub fn validate(&self, task: &TaskSpec, denoiser: &dyn Denoiser) -> Result<TimestepGrid> {
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(Error::invalid(format!("step size xi = {} must be finite and >= 0", self.xi)));
        }
        if self.data_consistency && !task.supports_consistency() {
            return Err(Error::contract(format!(
                "data consistency requires a linear selection operator; {} task has none",
                task.kind().name()
            )));
        }
        if !denoiser.supports_len(task.len()) {
            return Err(Error::contract(format!("denoiser cannot process {} samples", task.len())));
        }
        if self.t_max >= 1.0 {
            return Err(Error::invalid("t_max must be < 1 (alpha_s = 0 at t = 1)"));
        }
        TimestepGrid::uniform(self.steps, self.t_max, self.t_min)
    }
}

/// One sampler iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Iteration index, 0 for the first step from `t_max`.
    pub step: usize,
    pub t: f64,
    pub guidance_loss: f64,
    pub grad_norm: f64,
    pub x0_snapshot: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SamplerTrace {
    pub records: Vec<StepRecord>,
}

pub const TRACE_CSV_HEADER: &str = "step,t,guidance_loss,grad_norm";

impl SamplerTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{TRACE_CSV_HEADER}")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{}", r.step, r.t, r.guidance_loss, r.grad_norm)?;
        }
        Ok(())
    }
}

/// State visible to an observer after each iteration.
#[derive(Debug)]
pub struct StepView<'a> {
    pub step: usize,
    pub t: f64,
    pub s: f64,
    pub x0_hat: &'a [f64],
    pub x_s: &'a [f64],
}

/// Measurement loss and its gradient with respect to `x_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Guidance {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// `grad_{x_t} d(y, A(x_t))`, or through the denoiser for [`GradTarget::Denoised`] using
/// `d x0_hat / d x_t = alpha_t I - sigma_t dv/dx_t`.
pub fn guidance_gradient(
    x_t: &[f64],
    t: f64,
    denoiser: &dyn Denoiser,
    task: &TaskSpec,
    target: GradTarget,
) -> Result<Guidance> {
    crate::error::check_len(task.len(), x_t.len())?;
    let level = cosine_level(t)?;
    if target == GradTarget::Denoised && level.sigma == 0.0 {
        return Err(Error::invalid("denoised guidance undefined at t = 0"));
    }
    Ok(guidance_at(x_t, &level, denoiser, task, target, None))
}

fn guidance_at(
    x_t: &[f64],
    level: &NoiseLevel,
    denoiser: &dyn Denoiser,
    task: &TaskSpec,
    target: GradTarget,
    x0_hat: Option<&[f64]>,
) -> Guidance {
    let op = task.operator();
    let dist = task.distance();
    match target {
        GradTarget::Direct => {
            let pred = op.apply(x_t);
            let loss = dist.eval(task.y(), &pred);
            let grad = op.vjp(x_t, &dist.grad(task.y(), &pred));
            Guidance { loss, grad }
        }
        GradTarget::Denoised => {
            let owned;
            let x0 = match x0_hat {
                Some(x0) => x0,
                None => {
                    owned = denoiser.predict_x0(x_t, level);
                    &owned
                }
            };
            let pred = op.apply(x0);
            let loss = dist.eval(task.y(), &pred);
            let u = op.vjp(x0, &dist.grad(task.y(), &pred));
            let jv = denoiser.vjp(x_t, level, &u);
            let grad = u.iter().zip(&jv).map(|(ui, ji)| level.alpha * ui - level.sigma * ji).collect();
            Guidance { loss, grad }
        }
    }
}

/// Initial sample `A^T y + (I - A^T A)(k z + (1 - k) xbar)` for mask tasks, `z` otherwise.
pub fn init_sample<R: Rng + ?Sized>(task: &TaskSpec, rng: &mut R) -> Vec<f64> {
    let z: Vec<f64> = (0..task.len()).map(|_| StandardNormal.sample(rng)).collect();
    init_from_noise(task, z)
}

/// [`init_sample`] with an explicit noise draw.
pub fn init_from_noise(task: &TaskSpec, z: Vec<f64>) -> Vec<f64> {
    assert_eq!(z.len(), task.len());
    let Some(mask) = task.mask() else {
        return z;
    };
    let mut x = match task.xbar() {
        Some(xbar) => {
            let k = task.noise_mix();
            z.iter().zip(xbar.samples()).map(|(zi, xi)| k * zi + (1.0 - k) * xi).collect()
        }
        None => z,
    };
    project_in_place(&mut x, task.y(), mask);
    x
}

/// Per-run RNG stream derived from `(seed, run)`.
pub fn run_rng(seed: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}

/// Algorithm-1 style sampling; `rng` drives both `x_T` and the per-step noise.
pub fn ddpm_guided<R: Rng + ?Sized>(
    denoiser: &dyn Denoiser,
    task: &TaskSpec,
    cfg: &GuidanceConfig,
    rng: &mut R,
) -> Result<(Signal, SamplerTrace)> {
    let cfg = GuidanceConfig { sampler: SamplerKind::Ddpm, ..cfg.clone() };
    let x_t = init_sample(task, rng);
    run_from(denoiser, task, &cfg, x_t, rng, &mut |_| {})
}

/// Deterministic DDIM sampling; `rng` is only used to draw `x_T`.
pub fn ddim_guided<R: Rng + ?Sized>(
    denoiser: &dyn Denoiser,
    task: &TaskSpec,
    cfg: &GuidanceConfig,
    rng: &mut R,
) -> Result<(Signal, SamplerTrace)> {
    let cfg = GuidanceConfig { sampler: SamplerKind::Ddim, ..cfg.clone() };
    let x_t = init_sample(task, rng);
    run_from(denoiser, task, &cfg, x_t, rng, &mut |_| {})
}

/// Dispatch on `cfg.sampler`.
pub fn sample<R: Rng + ?Sized>(
    denoiser: &dyn Denoiser,
    task: &TaskSpec,
    cfg: &GuidanceConfig,
    rng: &mut R,
) -> Result<(Signal, SamplerTrace)> {
    let x_t = init_sample(task, rng);
    run_from(denoiser, task, cfg, x_t, rng, &mut |_| {})
}

/// Run the sampler from an explicit `x_T`, calling `observer` after every iteration.
pub fn run_from<R: Rng + ?Sized>(
    denoiser: &dyn Denoiser,
    task: &TaskSpec,
    cfg: &GuidanceConfig,
    x_init: Vec<f64>,
    rng: &mut R,
    observer: &mut dyn FnMut(&StepView<'_>),
) -> Result<(Signal, SamplerTrace)> {
    let grid = cfg.validate(task, denoiser)?;
    crate::error::check_len(task.len(), x_init.len())?;
    let mask = if cfg.data_consistency { task.mask() } else { None };
    let n = task.len();
    let mut x = x_init;
    let mut trace = SamplerTrace { records: Vec::with_capacity(grid.len()) };
    let mut noise = vec![0.0; n];

    for (step, (t, s)) in grid.pairs().enumerate() {
        let lt = cosine_level(t)?;
        let ls = cosine_level(s)?;
        let non_finite = |what: &str| Error::NonFinite { step, what: what.to_string() };

        if cfg.sampler == SamplerKind::Ddpm && cfg.placement == GuidancePlacement::BeforePosterior && cfg.xi > 0.0 {
            let g = guidance_at(&x, &lt, denoiser, task, cfg.grad_target, None);
            if g.grad.iter().any(|v| !v.is_finite()) {
                return Err(non_finite("guidance gradient"));
            }
            x.iter_mut().zip(&g.grad).for_each(|(xi, gi)| *xi -= cfg.xi * gi);
        }

        let x0_hat = denoiser.predict_x0(&x, &lt);
        if x0_hat.iter().any(|v| !v.is_finite()) {
            return Err(non_finite("denoised estimate"));
        }
        let guidance = guidance_at(&x, &lt, denoiser, task, cfg.grad_target, Some(&x0_hat));
        let grad_norm = norm(&guidance.grad);
        if !grad_norm.is_finite() {
            return Err(non_finite("guidance gradient"));
        }

        let mut x_s = match cfg.sampler {
            SamplerKind::Ddpm => {
                let c = DdpmCoefficients::between(&lt, &ls)?;
                noise.iter_mut().for_each(|e| *e = StandardNormal.sample(rng));
                let mut x_s: Vec<f64> = x0_hat
                    .iter()
                    .zip(&x)
                    .zip(&noise)
                    .map(|((x0, xt), e)| c.x0_coef * x0 + c.xt_coef * xt + c.noise_std * e)
                    .collect();
                if cfg.placement == GuidancePlacement::AfterPosterior && cfg.xi > 0.0 {
                    x_s.iter_mut().zip(&guidance.grad).for_each(|(xs, g)| *xs -= cfg.xi * g);
                }
                x_s
            }
            SamplerKind::Ddim => {
                let dir = (1.0 - ls.alpha * ls.alpha).max(0.0).sqrt();
                x0_hat
                    .iter()
                    .zip(&x)
                    .zip(&guidance.grad)
                    .map(|((x0, xt), g)| {
                        let eps = (xt - lt.alpha * x0) / lt.sigma - cfg.xi * lt.sigma * g;
                        ls.alpha * x0 + dir * eps
                    })
                    .collect()
            }
        };

        if let Some(mask) = mask {
            project_in_place(&mut x_s, task.y(), mask);
            debug_assert_eq!(crate::measure::apply_mask(mask, &x_s).ok().as_deref(), Some(task.y()));
        }
        if x_s.iter().any(|v| !v.is_finite()) {
            return Err(non_finite("sample state"));
        }

        let snapshot = cfg.snapshot_every.filter(|&k| k > 0 && step % k == 0).map(|_| x0_hat.clone());
        trace.records.push(StepRecord { step, t, guidance_loss: guidance.loss, grad_norm, x0_snapshot: snapshot });
        observer(&StepView { step, t, s, x0_hat: &x0_hat, x_s: &x_s });
        x = x_s;
    }
    Ok((Signal::new(x, task.sample_rate())?, trace))
}

/// `runs` independent samples; run `i` uses the stream [`run_rng`]`(cfg.seed, i)`.
/// Output order and values do not depend on `parallelism`.
pub fn sample_batch(
    denoiser: &dyn Denoiser,
    task: &TaskSpec,
    cfg: &GuidanceConfig,
    runs: usize,
    parallelism: Parallelism,
) -> Result<Vec<(Signal, SamplerTrace)>> {
    cfg.validate(task, denoiser)?;
    parallelism.try_map_indexed(runs, |i| {
        let mut rng = run_rng(cfg.seed, i as u64);
        sample(denoiser, task, cfg, &mut rng)
    })
}
