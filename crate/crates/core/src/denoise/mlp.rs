//! Small fully connected v-prediction network with hand-written backpropagation.
//!
//! Input is the noisy block `x_t` concatenated with sinusoidal features of `t`; hidden
//! layers use SiLU. Longer signals are processed as independent blocks of `data_dim`
//! samples. Parameters live in one flat vector, layer by layer, weights (row-major,
//! `out x in`) followed by biases.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::Denoiser;
use crate::par::Parallelism;
use crate::schedule::{cosine_level, NoiseLevel};
use crate::{Error, Result, Signal};

/// Sinusoidal time features fed alongside `x_t`.
pub const TIME_FEATURES: usize = 8;

const MAGIC: &[u8; 4] = b"VMLP";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpConfig {
    /// Samples per block.
    pub data_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl MlpConfig {
    /// Three hidden layers of width 128.
    pub fn standard(data_dim: usize) -> Self {
        Self { data_dim, hidden_width: 128, hidden_layers: 3 }
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.data_dim + TIME_FEATURES;
        for _ in 0..self.hidden_layers {
            shapes.push((fan_in, self.hidden_width));
            fan_in = self.hidden_width;
        }
        shapes.push((fan_in, self.data_dim));
        shapes
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl LayerShape {
    fn weights<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.offset..self.offset + self.fan_in * self.fan_out]
    }

    fn bias<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.fan_in * self.fan_out;
        &p[start..start + self.fan_out]
    }

    fn len(&self) -> usize {
        self.fan_out * (self.fan_in + 1)
    }
}

#[derive(Debug, Clone)]
pub struct MlpDenoiser {
    data_dim: usize,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
    velocity: Vec<f64>,
    step: u64,
}

/// One training example: clean block, diffusion time and noise draw.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub x0: Vec<f64>,
    pub t: f64,
    pub eps: Vec<f64>,
}

/// Per-layer pre-activations and activations of one forward pass.
struct Tape {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    out: Vec<f64>,
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

pub fn time_features(t: f64) -> [f64; TIME_FEATURES] {
    let mut f = [0.0; TIME_FEATURES];
    for k in 0..TIME_FEATURES / 2 {
        let (s, c) = (PI * (1 << k) as f64 * t).sin_cos();
        f[2 * k] = s;
        f[2 * k + 1] = c;
    }
    f
}

impl MlpDenoiser {
    /// LeCun-normal hidden weights, zero output layer and biases.
    pub fn new<R: Rng + ?Sized>(cfg: MlpConfig, rng: &mut R) -> Result<Self> {
        if cfg.data_dim == 0 || cfg.hidden_width == 0 || cfg.hidden_layers == 0 {
            return Err(Error::invalid("mlp dimensions must be non-zero"));
        }
        let mut me = Self::zeroed(cfg.data_dim, &cfg.shapes());
        let last = me.layers.len() - 1;
        for (li, layer) in me.layers.clone().iter().enumerate() {
            if li == last {
                continue;
            }
            let dist = Normal::new(0.0, (1.0 / layer.fan_in as f64).sqrt()).expect("valid std");
            for w in &mut me.params[layer.offset..layer.offset + layer.fan_in * layer.fan_out] {
                *w = dist.sample(rng);
            }
        }
        Ok(me)
    }

    fn zeroed(data_dim: usize, shapes: &[(usize, usize)]) -> Self {
        let mut offset = 0;
        let layers: Vec<LayerShape> = shapes
            .iter()
            .map(|&(fan_in, fan_out)| {
                let l = LayerShape { fan_in, fan_out, offset };
                offset += l.len();
                l
            })
            .collect();
        Self { data_dim, layers, params: vec![0.0; offset], velocity: vec![0.0; offset], step: 0 }
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Optimizer steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// `(fan_in, fan_out)` of each layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.fan_in, l.fan_out)).collect()
    }

    fn forward(&self, x: &[f64], t: f64) -> Tape {
        let mut input = Vec::with_capacity(self.data_dim + TIME_FEATURES);
        input.extend_from_slice(x);
        input.extend_from_slice(&time_features(t));
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = input;
        for (li, layer) in self.layers.iter().enumerate() {
            let w = layer.weights(&self.params);
            let b = layer.bias(&self.params);
            let z: Vec<f64> = (0..layer.fan_out)
                .map(|o| {
                    let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                    b[o] + row.iter().zip(&h).map(|(a, c)| a * c).sum::<f64>()
                })
                .collect();
            inputs.push(h);
            if li == last {
                return Tape { inputs, pre, out: z };
            }
            h = z.iter().map(|&v| silu(v)).collect();
            pre.push(z);
        }
        unreachable!("network has at least one layer")
    }

    /// Backpropagate `d_out`; accumulates into `grad` when given, returns d/d(input block).
    fn backward(&self, tape: &Tape, d_out: &[f64], mut grad: Option<&mut [f64]>) -> Vec<f64> {
        let mut delta = d_out.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let w = layer.weights(&self.params);
            let input = &tape.inputs[li];
            if let Some(g) = grad.as_deref_mut() {
                let (gw, gb) = g[layer.offset..layer.offset + layer.len()].split_at_mut(layer.fan_in * layer.fan_out);
                for (o, &d) in delta.iter().enumerate() {
                    gb[o] += d;
                    for (gwi, xi) in gw[o * layer.fan_in..(o + 1) * layer.fan_in].iter_mut().zip(input) {
                        *gwi += d * xi;
                    }
                }
            }
            let mut d_in = vec![0.0; layer.fan_in];
            for (o, &d) in delta.iter().enumerate() {
                for (di, wi) in d_in.iter_mut().zip(&w[o * layer.fan_in..(o + 1) * layer.fan_in]) {
                    *di += d * wi;
                }
            }
            if li > 0 {
                for (di, &z) in d_in.iter_mut().zip(&tape.pre[li - 1]) {
                    *di *= silu_grad(z);
                }
            }
            delta = d_in;
        }
        delta.truncate(self.data_dim);
        delta
    }

    /// Mean over items of `||v - v_hat||^2` and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, items: &[TrainItem]) -> (f64, Vec<f64>) {
        self.loss_and_grad_with(items, Parallelism::Sequential)
    }

    fn loss_and_grad_with(&self, items: &[TrainItem], par: Parallelism) -> (f64, Vec<f64>) {
        const CHUNK: usize = 16;
        let scale = 1.0 / items.len() as f64;
        let n_chunks = items.len().div_ceil(CHUNK);
        let partials = par.map_indexed(n_chunks, |c| {
            let mut grad = vec![0.0; self.params.len()];
            let mut loss = 0.0;
            for item in &items[c * CHUNK..((c + 1) * CHUNK).min(items.len())] {
                let l = cosine_level(item.t).expect("training time in [0, 1]");
                let x_t: Vec<f64> = item.x0.iter().zip(&item.eps).map(|(x, e)| l.alpha * x + l.sigma * e).collect();
                let target: Vec<f64> = item.x0.iter().zip(&item.eps).map(|(x, e)| l.alpha * e - l.sigma * x).collect();
                let tape = self.forward(&x_t, item.t);
                let resid: Vec<f64> = tape.out.iter().zip(&target).map(|(p, v)| p - v).collect();
                loss += resid.iter().map(|r| r * r).sum::<f64>();
                let d_out: Vec<f64> = resid.iter().map(|r| 2.0 * r * scale).collect();
                self.backward(&tape, &d_out, Some(&mut grad));
            }
            (loss, grad)
        });
        let mut total = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        for (l, g) in partials {
            total += l;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        (total * scale, grad)
    }

    fn for_blocks(&self, x: &[f64], mut f: impl FnMut(&[f64], usize)) {
        assert!(self.supports_len(x.len()), "signal length {} not a multiple of {}", x.len(), self.data_dim);
        for (i, block) in x.chunks(self.data_dim).enumerate() {
            f(block, i * self.data_dim);
        }
    }

    /// Write the parameters in the flat little-endian model format.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.data_dim as u32).to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.fan_in as u32).to_le_bytes())?;
            w.write_all(&(l.fan_out as u32).to_le_bytes())?;
        }
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header).map_err(|e| Error::ModelFormat(format!("header: {e}")))?;
        if &header[0..4] != MAGIC {
            return Err(Error::ModelFormat("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        let data_dim = word(8) as usize;
        let n_layers = word(12) as usize;
        if data_dim == 0 || n_layers == 0 || n_layers > 1024 {
            return Err(Error::ModelFormat("invalid shape header".into()));
        }
        let mut shapes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf).map_err(|e| Error::ModelFormat(format!("shape table: {e}")))?;
            let fan_in = u32::from_le_bytes(buf[0..4].try_into().unwrap()) as usize;
            let fan_out = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
            shapes.push((fan_in, fan_out));
        }
        let chained = shapes.windows(2).all(|w| w[0].1 == w[1].0);
        if shapes[0].0 != data_dim + TIME_FEATURES || shapes[n_layers - 1].1 != data_dim || !chained {
            return Err(Error::ModelFormat("inconsistent layer shapes".into()));
        }
        let mut me = Self::zeroed(data_dim, &shapes);
        let mut buf = [0u8; 8];
        for p in me.params.iter_mut() {
            r.read_exact(&mut buf).map_err(|e| Error::ModelFormat(format!("parameters: {e}")))?;
            *p = f64::from_le_bytes(buf);
        }
        if me.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::ModelFormat("non-finite parameter".into()));
        }
        Ok(me)
    }
}

impl Denoiser for MlpDenoiser {
    fn supports_len(&self, len: usize) -> bool {
        len > 0 && len.is_multiple_of(self.data_dim)
    }

    fn predict_v(&self, x_t: &[f64], level: &NoiseLevel) -> Vec<f64> {
        let mut out = vec![0.0; x_t.len()];
        self.for_blocks(x_t, |block, at| {
            out[at..at + block.len()].copy_from_slice(&self.forward(block, level.t).out);
        });
        out
    }

    fn vjp(&self, x_t: &[f64], level: &NoiseLevel, cotangent: &[f64]) -> Vec<f64> {
        assert_eq!(x_t.len(), cotangent.len());
        let mut out = vec![0.0; x_t.len()];
        self.for_blocks(x_t, |block, at| {
            let tape = self.forward(block, level.t);
            let g = self.backward(&tape, &cotangent[at..at + block.len()], None);
            out[at..at + block.len()].copy_from_slice(&g);
        });
        out
    }
}

/// Momentum SGD settings for [`train_toy`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Rescale the gradient to at most this norm.
    pub clip_norm: Option<f64>,
    /// Cosine-decay the learning rate to zero over `steps`.
    pub cosine_decay: bool,
    pub parallelism: Parallelism,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 64,
            clip_norm: Some(10.0),
            cosine_decay: true,
            parallelism: Parallelism::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    /// Mini-batch loss before each update.
    pub losses: Vec<f64>,
}

/// Draw a batch of `(x0, t, eps)` items with `t ~ U(0, 1]`.
pub fn sample_items<R: Rng + ?Sized>(batch: &[Signal], rng: &mut R) -> Vec<TrainItem> {
    batch
        .iter()
        .map(|x0| TrainItem {
            x0: x0.samples().to_vec(),
            t: 1.0 - rng.random::<f64>(),
            eps: (0..x0.len()).map(|_| StandardNormal.sample(rng)).collect(),
        })
        .collect()
}

/// Monte-Carlo estimate of the v-prediction loss on `batch`, one `(t, eps)` draw per item.
pub fn v_loss<D, R>(denoiser: &D, batch: &[Signal], rng: &mut R) -> Result<f64>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
{
    if batch.is_empty() {
        return Err(Error::invalid("v_loss needs a non-empty batch"));
    }
    if let Some(bad) = batch.iter().find(|s| !denoiser.supports_len(s.len())) {
        return Err(Error::invalid(format!("denoiser cannot process length {}", bad.len())));
    }
    let items = sample_items(batch, rng);
    let total: f64 = items
        .iter()
        .map(|item| {
            let l = cosine_level(item.t).expect("t in (0, 1]");
            let x_t: Vec<f64> = item.x0.iter().zip(&item.eps).map(|(x, e)| l.alpha * x + l.sigma * e).collect();
            let v_hat = denoiser.predict_v(&x_t, &l);
            item.x0
                .iter()
                .zip(&item.eps)
                .zip(&v_hat)
                .map(|((x, e), p)| {
                    let r = p - (l.alpha * e - l.sigma * x);
                    r * r
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / batch.len() as f64)
}

/// Train on `dataset` (each signal one block of `data_dim` samples) with momentum SGD.
pub fn train_toy<R: Rng + ?Sized>(
    model: &mut MlpDenoiser,
    dataset: &[Signal],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainingLog> {
    if cfg.steps == 0 {
        return Err(Error::invalid("training needs at least one step"));
    }
    if cfg.batch_size == 0 || dataset.is_empty() {
        return Err(Error::invalid("training needs a non-empty dataset and batch"));
    }
    if let Some(bad) = dataset.iter().find(|s| s.len() != model.data_dim) {
        return Err(Error::invalid(format!(
            "dataset item has {} samples, model block is {}",
            bad.len(),
            model.data_dim
        )));
    }
    let mut log = TrainingLog { losses: Vec::with_capacity(cfg.steps) };
    for step in 0..cfg.steps {
        let batch: Vec<Signal> =
            (0..cfg.batch_size).map(|_| dataset[rng.random_range(0..dataset.len())].clone()).collect();
        let items = sample_items(&batch, rng);
        let (loss, mut grad) = model.loss_and_grad_with(&items, cfg.parallelism);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        if let Some(max) = cfg.clip_norm {
            let n = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if n > max {
                grad.iter_mut().for_each(|g| *g *= max / n);
            }
        }
        let lr = if cfg.cosine_decay {
            0.5 * cfg.learning_rate * (1.0 + (PI * step as f64 / cfg.steps as f64).cos())
        } else {
            cfg.learning_rate
        };
        for ((p, v), g) in model.params.iter_mut().zip(model.velocity.iter_mut()).zip(&grad) {
            *v = cfg.momentum * *v + g;
            *p -= lr * *v;
        }
        model.step += 1;
        log.losses.push(loss);
    }
    Ok(log)
}
