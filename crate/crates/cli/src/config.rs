use std::path::{Path, PathBuf};

use clap::Args;
use gdiff_core::sampler::{GradTarget, GuidanceConfig, SamplerKind, XI_WAVEFORM};
use gdiff_core::tasks::{
    DEFAULT_FADE_SECONDS, DEFAULT_HOLE_SECONDS, DEFAULT_NOISE_MIX, DEFAULT_PROMPT_SECONDS, DEFAULT_SAMPLE_RATE,
    DEFAULT_TOTAL_SECONDS,
};
use serde::{Deserialize, Serialize};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "GDIFF_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DenoiserChoice {
    /// Zero-mean Gaussian prior; AR(1) covariance when `rho` is set, otherwise iid.
    Gaussian {
        variance: f64,
        #[serde(default)]
        rho: Option<f64>,
    },
    /// One equal-weight component per WAV file in `means_dir`.
    Gmm {
        means_dir: PathBuf,
        variance: f64,
    },
    Mlp {
        path: PathBuf,
    },
}

impl Default for DenoiserChoice {
    fn default() -> Self {
        DenoiserChoice::Gaussian { variance: 0.05, rho: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSection {
    pub kind: SamplerKind,
    pub steps: usize,
    pub xi: f64,
    pub grad_target: GradTarget,
    pub data_consistency: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Ddpm,
            steps: 50,
            xi: XI_WAVEFORM,
            grad_target: GradTarget::Direct,
            data_consistency: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    /// Directory of WAV files; every file is cut into blocks of `block` samples.
    pub data_dir: Option<PathBuf>,
    pub block: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            data_dir: None,
            block: 64,
            hidden_width: 128,
            hidden_layers: 3,
            steps: 2000,
            learning_rate: 1e-3,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub kind: String,
    pub count: usize,
    pub frequencies: Vec<f64>,
    pub amplitude: f64,
    pub rho: f64,
    pub variance: f64,
    pub components: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            kind: "sine_mix".into(),
            count: 4,
            frequencies: vec![220.0, 440.0, 660.0],
            amplitude: 0.5,
            rho: 0.9,
            variance: 0.05,
            components: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    /// Subcommand whose task is evaluated.
    pub task: String,
    pub steps: Vec<usize>,
    pub runs: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { task: "infill".into(), steps: vec![50, 500], runs: 4 }
    }
}

/// Effective configuration of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub sample_rate: u32,
    pub input: Option<PathBuf>,
    pub input_b: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub total_seconds: f64,
    pub prompt_seconds: f64,
    pub hole_seconds: f64,
    pub fade_seconds: f64,
    pub k: f64,
    pub labels: Vec<f64>,
    pub embedder_seed: u64,
    pub embedding_dim: usize,
    pub sampler: SamplerSection,
    pub denoiser: DenoiserChoice,
    pub train: TrainSection,
    pub synth: SynthSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            input: None,
            input_b: None,
            output_dir: None,
            total_seconds: DEFAULT_TOTAL_SECONDS,
            prompt_seconds: DEFAULT_PROMPT_SECONDS,
            hole_seconds: DEFAULT_HOLE_SECONDS,
            fade_seconds: DEFAULT_FADE_SECONDS,
            k: DEFAULT_NOISE_MIX,
            labels: vec![1.0],
            embedder_seed: 0,
            embedding_dim: 16,
            sampler: SamplerSection::default(),
            denoiser: DenoiserChoice::default(),
            train: TrainSection::default(),
            synth: SynthSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn guidance(&self, steps: usize) -> GuidanceConfig {
        GuidanceConfig {
            xi: self.sampler.xi,
            grad_target: self.sampler.grad_target,
            data_consistency: self.sampler.data_consistency,
            steps,
            sampler: self.sampler.kind,
            seed: self.seed,
            ..GuidanceConfig::default()
        }
    }

    /// `--out`, then `output_dir`, then `$GDIFF_OUTPUT_ROOT/<command>-<seed>`, then `./gdiff-out/<command>-<seed>`.
    pub fn resolve_output_dir(&mut self, command: &str) {
        if self.output_dir.is_none() {
            let root =
                std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("gdiff-out"));
            self.output_dir = Some(root.join(format!("{command}-{}", self.seed)));
        }
    }
}

/// Command-line overrides; any flag given replaces the config-file value.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON configuration file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Second track for transitions.
    #[arg(long)]
    pub input_b: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sample_rate: Option<u32>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long, value_parser = parse_sampler)]
    pub sampler: Option<SamplerKind>,
    #[arg(long, value_parser = parse_grad_target)]
    pub grad_target: Option<GradTarget>,
    #[arg(long)]
    pub data_consistency: Option<bool>,
    #[arg(long)]
    pub total_seconds: Option<f64>,
    #[arg(long)]
    pub prompt_seconds: Option<f64>,
    #[arg(long)]
    pub hole_seconds: Option<f64>,
    #[arg(long)]
    pub fade_seconds: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
    /// Comma-separated target labels in [0, 1].
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<f64>>,
    /// Trained model file; selects the MLP denoiser.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Directory of WAV component means; selects the GMM denoiser.
    #[arg(long)]
    pub gmm_dir: Option<PathBuf>,
    /// Prior or component variance for the analytic denoisers.
    #[arg(long)]
    pub prior_variance: Option<f64>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub synth_kind: Option<String>,
    #[arg(long)]
    pub train_steps: Option<usize>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub eval_task: Option<String>,
    #[arg(long)]
    pub runs: Option<usize>,
}

fn parse_sampler(s: &str) -> Result<SamplerKind, String> {
    match s {
        "ddpm" => Ok(SamplerKind::Ddpm),
        "ddim" => Ok(SamplerKind::Ddim),
        _ => Err(format!("unknown sampler {s:?} (ddpm | ddim)")),
    }
}

fn parse_grad_target(s: &str) -> Result<GradTarget, String> {
    match s {
        "direct" => Ok(GradTarget::Direct),
        "denoised" => Ok(GradTarget::Denoised),
        _ => Err(format!("unknown gradient target {s:?} (direct | denoised)")),
    }
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = &$src {
                    $dst = v.clone();
                }
            };
        }
        if let Some(v) = &self.out {
            cfg.output_dir = Some(v.clone());
        }
        if let Some(v) = &self.input {
            cfg.input = Some(v.clone());
        }
        if let Some(v) = &self.input_b {
            cfg.input_b = Some(v.clone());
        }
        set!(self.seed => cfg.seed);
        set!(self.sample_rate => cfg.sample_rate);
        set!(self.steps => cfg.sampler.steps);
        set!(self.xi => cfg.sampler.xi);
        set!(self.sampler => cfg.sampler.kind);
        set!(self.grad_target => cfg.sampler.grad_target);
        set!(self.data_consistency => cfg.sampler.data_consistency);
        set!(self.total_seconds => cfg.total_seconds);
        set!(self.prompt_seconds => cfg.prompt_seconds);
        set!(self.hole_seconds => cfg.hole_seconds);
        set!(self.fade_seconds => cfg.fade_seconds);
        set!(self.k => cfg.k);
        set!(self.labels => cfg.labels);
        set!(self.count => cfg.synth.count);
        set!(self.synth_kind => cfg.synth.kind);
        set!(self.train_steps => cfg.train.steps);
        set!(self.eval_task => cfg.eval.task);
        set!(self.runs => cfg.eval.runs);
        if let Some(v) = &self.data_dir {
            cfg.train.data_dir = Some(v.clone());
        }
        if let Some(path) = &self.model {
            cfg.denoiser = DenoiserChoice::Mlp { path: path.clone() };
        } else if let Some(dir) = &self.gmm_dir {
            let variance = match &cfg.denoiser {
                DenoiserChoice::Gmm { variance, .. } | DenoiserChoice::Gaussian { variance, .. } => *variance,
                DenoiserChoice::Mlp { .. } => 0.05,
            };
            cfg.denoiser = DenoiserChoice::Gmm { means_dir: dir.clone(), variance };
        }
        if let Some(v) = self.prior_variance {
            match &mut cfg.denoiser {
                DenoiserChoice::Gaussian { variance, .. } | DenoiserChoice::Gmm { variance, .. } => *variance = v,
                DenoiserChoice::Mlp { .. } => {}
            }
        }
    }
}
