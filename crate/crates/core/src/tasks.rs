//! Task constructors: each binds a measurement operator, a distance, the target
//! measurement `y` and the recipe for the initial sample.
//!
//! | task | operator | distance | initial free region |
//! |---|---|---|---|
//! | continuation | left-context mask | L1 | `z` |
//! | infill | left + right context mask | L1 | `z` |
//! | regenerate | as infill | L1 | `k z + (1 - k) xbar` |
//! | transition | as infill, `xbar` crossfaded from two tracks | L1 | `k z + (1 - k) xbar` |
//! | embedder guidance | `tanh(W x)` | squared L2 | `z` (whole signal) |
//! | classifier guidance | per-class sigmoid | BCE | `z` (whole signal) |
//! | unconditional | none (zero rows) | squared L2 | `z` (whole signal) |

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::measure::{build_transition_target, Distance, LinearMask, MeasurementOp, ToyClassifier, ToyEmbedder};
use crate::signal::seconds_to_samples;
use crate::{Error, Result, Signal};

/// Default noise-mixing coefficient for regenerate and transition initial samples.
pub const DEFAULT_NOISE_MIX: f64 = 0.85;

/// Desk-scale default sample rate (mono).
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_TOTAL_SECONDS: f64 = 6.0;
pub const DEFAULT_PROMPT_SECONDS: f64 = 2.4;
pub const DEFAULT_HOLE_SECONDS: f64 = 2.0;
pub const DEFAULT_FADE_SECONDS: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Continuation,
    Infill,
    Regenerate,
    Transition,
    EmbedderGuidance,
    ClassifierGuidance,
    Unconditional,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Continuation => "continuation",
            TaskKind::Infill => "infill",
            TaskKind::Regenerate => "regenerate",
            TaskKind::Transition => "transition",
            TaskKind::EmbedderGuidance => "embedder_guidance",
            TaskKind::ClassifierGuidance => "classifier_guidance",
            TaskKind::Unconditional => "unconditional",
        }
    }

    /// Kinds whose operator is a linear selection mask.
    pub fn uses_mask(&self) -> bool {
        matches!(self, TaskKind::Continuation | TaskKind::Infill | TaskKind::Regenerate | TaskKind::Transition)
    }
}

#[derive(Debug, Clone)]
pub struct TaskSpec {
    kind: TaskKind,
    operator: Arc<dyn MeasurementOp>,
    distance: Distance,
    y: Vec<f64>,
    xbar: Option<Signal>,
    k: f64,
    n: usize,
    sample_rate: u32,
}

impl TaskSpec {
    fn build(
        kind: TaskKind,
        operator: Arc<dyn MeasurementOp>,
        distance: Distance,
        y: Vec<f64>,
        xbar: Option<Signal>,
        k: f64,
        sample_rate: u32,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&k) {
            return Err(Error::invalid(format!("noise mix k = {k} outside [0, 1]")));
        }
        if kind.uses_mask() != operator.as_mask().is_some() {
            return Err(Error::contract(format!("{} task with incompatible operator", kind.name())));
        }
        if y.len() != operator.output_len() {
            return Err(Error::LengthMismatch { expected: operator.output_len(), actual: y.len() });
        }
        let n = operator.input_len();
        if let Some(x) = &xbar {
            crate::error::check_len(n, x.len())?;
        }
        Ok(Self { kind, operator, distance, y, xbar, k, n, sample_rate })
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn operator(&self) -> &dyn MeasurementOp {
        self.operator.as_ref()
    }

    pub fn mask(&self) -> Option<&LinearMask> {
        self.operator.as_mask()
    }

    pub fn distance(&self) -> Distance {
        self.distance
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn xbar(&self) -> Option<&Signal> {
        self.xbar.as_ref()
    }

    pub fn noise_mix(&self) -> f64 {
        self.k
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Whether the exact data-consistency projection is available.
    pub fn supports_consistency(&self) -> bool {
        self.mask().is_some()
    }

    /// Same task with a different distance (e.g. plain L2 for embedder guidance).
    pub fn with_distance(mut self, distance: Distance) -> Self {
        self.distance = distance;
        self
    }

    /// `d(y, A(x))`.
    pub fn loss(&self, x: &[f64]) -> f64 {
        self.distance.eval(&self.y, &self.operator.apply(x))
    }
}

/// Keep `prompt` and generate up to `total_len` samples.
pub fn continuation_task(prompt: &Signal, total_len: usize) -> Result<TaskSpec> {
    if prompt.len() >= total_len {
        return Err(Error::invalid(format!(
            "prompt ({} samples) must be shorter than the output ({total_len})",
            prompt.len()
        )));
    }
    let mask = LinearMask::left_context(prompt.len(), total_len)?;
    TaskSpec::build(
        TaskKind::Continuation,
        Arc::new(mask),
        Distance::L1,
        prompt.samples().to_vec(),
        None,
        1.0,
        prompt.sample_rate(),
    )
}

fn hole_mask(len: usize, hole_start: usize, hole_len: usize) -> Result<LinearMask> {
    if hole_start == 0 || hole_len == 0 || hole_start + hole_len >= len {
        return Err(Error::invalid(format!(
            "hole [{hole_start}, {}) must leave context on both sides of {len} samples",
            hole_start + hole_len
        )));
    }
    LinearMask::infill_union(hole_start, len - hole_start - hole_len, len)
}

/// Regenerate `[hole_start, hole_start + hole_len)` from pure noise.
pub fn infill_task(original: &Signal, hole_start: usize, hole_len: usize) -> Result<TaskSpec> {
    let mut spec = regenerate_task(original, hole_start, hole_len, 1.0)?;
    spec.kind = TaskKind::Infill;
    Ok(spec)
}

/// Regenerate the hole starting from `k z + (1 - k) original`.
pub fn regenerate_task(original: &Signal, hole_start: usize, hole_len: usize, k: f64) -> Result<TaskSpec> {
    let mask = hole_mask(original.len(), hole_start, hole_len)?;
    let y = mask.apply(original.samples());
    TaskSpec::build(
        TaskKind::Regenerate,
        Arc::new(mask),
        Distance::L1,
        y,
        Some(original.clone()),
        k,
        original.sample_rate(),
    )
}

/// Start and length of a hole of `hole_len` samples centred in `len`.
pub fn centered_hole(len: usize, hole_len: usize) -> (usize, usize) {
    ((len.saturating_sub(hole_len)) / 2, hole_len)
}

/// Bridge the first `left` samples of `track_a` to the last `right` samples of `track_b`,
/// starting from their constant-power crossfade.
pub fn transition_task(
    track_a: &Signal,
    track_b: &Signal,
    left: usize,
    right: usize,
    fade_len: usize,
    k: f64,
) -> Result<TaskSpec> {
    let xbar = build_transition_target(track_a, track_b, left, right, fade_len)?;
    let mask = LinearMask::infill_union(left, right, xbar.len())?;
    let y = mask.apply(xbar.samples());
    let rate = xbar.sample_rate();
    TaskSpec::build(TaskKind::Transition, Arc::new(mask), Distance::L1, y, Some(xbar), k, rate)
}

/// Steer a pure-noise sample towards the embedding of `reference` (squared L2 by default).
pub fn embedder_guidance_task(reference: &Signal, embedder: Arc<ToyEmbedder>) -> Result<TaskSpec> {
    if embedder.input_len() != reference.len() {
        return Err(Error::LengthMismatch { expected: embedder.input_len(), actual: reference.len() });
    }
    let y = embedder.apply(reference.samples());
    TaskSpec::build(
        TaskKind::EmbedderGuidance,
        embedder,
        Distance::SquaredL2,
        y,
        Some(reference.clone()),
        1.0,
        reference.sample_rate(),
    )
}

/// Steer a pure-noise sample of the classifier's input length towards `labels` in `[0, 1]^m`.
pub fn classifier_guidance_task(labels: &[f64], classifier: Arc<ToyClassifier>, sample_rate: u32) -> Result<TaskSpec> {
    if labels.len() != classifier.output_len() {
        return Err(Error::LengthMismatch { expected: classifier.output_len(), actual: labels.len() });
    }
    if let Some(bad) = labels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::invalid(format!("label {bad} outside [0, 1]")));
    }
    TaskSpec::build(TaskKind::ClassifierGuidance, classifier, Distance::Bce, labels.to_vec(), None, 1.0, sample_rate)
}

/// Operator with no output rows: the guidance loss is identically zero.
#[derive(Debug, Clone, Copy)]
struct NoMeasurement {
    n: usize,
}

impl MeasurementOp for NoMeasurement {
    fn input_len(&self) -> usize {
        self.n
    }

    fn output_len(&self) -> usize {
        0
    }

    fn apply(&self, _x: &[f64]) -> Vec<f64> {
        Vec::new()
    }

    fn vjp(&self, x: &[f64], _cotangent: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }
}

/// Plain sampling from the prior: no measurement, pure-noise init.
pub fn unconditional_task(len: usize, sample_rate: u32) -> Result<TaskSpec> {
    if len == 0 {
        return Err(Error::invalid("unconditional task needs at least one sample"));
    }
    TaskSpec::build(
        TaskKind::Unconditional,
        Arc::new(NoMeasurement { n: len }),
        Distance::SquaredL2,
        Vec::new(),
        None,
        1.0,
        sample_rate,
    )
}

/// Sample counts for the default durations at `rate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DefaultLengths {
    pub total: usize,
    pub prompt: usize,
    pub hole: usize,
    pub fade: usize,
}

impl DefaultLengths {
    pub fn at_rate(rate: u32) -> Self {
        Self {
            total: seconds_to_samples(DEFAULT_TOTAL_SECONDS, rate),
            prompt: seconds_to_samples(DEFAULT_PROMPT_SECONDS, rate),
            hole: seconds_to_samples(DEFAULT_HOLE_SECONDS, rate),
            fade: seconds_to_samples(DEFAULT_FADE_SECONDS, rate),
        }
    }
}
