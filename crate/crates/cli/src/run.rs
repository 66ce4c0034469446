use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use gdiff_core::denoise::mlp::{train_toy, v_loss};
use gdiff_core::denoise::{
    Denoiser, GaussianDenoiser, GaussianPrior, GmmDenoiser, MlpConfig, MlpDenoiser, TrainConfig,
};
use gdiff_core::measure::{MeasurementOp, ToyClassifier, ToyEmbedder};
use gdiff_core::metrics::{class_kld, mel_reconstruction_distance, write_metrics_csv, MelConfig, MetricRow};
use gdiff_core::par::Parallelism;
use gdiff_core::sampler::{run_rng, sample, sample_batch, GuidanceConfig, SamplerTrace};
use gdiff_core::signal::seconds_to_samples;
use gdiff_core::synth::SynthParams;
use gdiff_core::tasks::{
    centered_hole, classifier_guidance_task, continuation_task, embedder_guidance_task, infill_task, regenerate_task,
    transition_task, unconditional_task, TaskSpec,
};
use gdiff_core::wav::{read_wav, write_wav};
use gdiff_core::Signal;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{DenoiserChoice, RunConfig};

/// Largest length for which the AR(1) prior is eigendecomposed densely.
const MAX_DENSE_PRIOR: usize = 2048;

/// Machine-readable failure report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub stage: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
}

impl Failure {
    pub fn new(stage: &'static str, message: impl ToString) -> Self {
        Self { stage, message: message.to_string(), step: None }
    }

    fn core(stage: &'static str, e: gdiff_core::Error) -> Self {
        Self { stage, step: e.step(), message: e.to_string() }
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T> Stage<T> for gdiff_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure::core(stage, e))
    }
}

impl<T> Stage<T> for std::io::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure::new(stage, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Generate,
    Continue,
    Infill,
    Regen,
    Transition,
    GuideEmbed,
    GuideClass,
    TrainToy,
    Eval,
    SynthData,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Continue => "continue",
            Command::Infill => "infill",
            Command::Regen => "regen",
            Command::Transition => "transition",
            Command::GuideEmbed => "guide-embed",
            Command::GuideClass => "guide-class",
            Command::TrainToy => "train-toy",
            Command::Eval => "eval",
            Command::SynthData => "synth-data",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        [
            Command::Generate,
            Command::Continue,
            Command::Infill,
            Command::Regen,
            Command::Transition,
            Command::GuideEmbed,
            Command::GuideClass,
        ]
        .into_iter()
        .find(|c| c.name() == name)
    }
}

/// A task plus what its metrics compare against.
struct Prepared {
    task: TaskSpec,
    /// Ground-truth signal for the mel-reconstruction distance.
    reference: Option<Signal>,
    /// Probe used by the guidance metrics.
    probe: Option<Probe>,
}

enum Probe {
    Embedder(Arc<ToyEmbedder>),
    Classifier(Arc<ToyClassifier>),
}

pub fn execute(command: Command, cfg: &RunConfig) -> Result<(), Failure> {
    let out = cfg.output_dir.clone().ok_or_else(|| Failure::new("config", "no output directory"))?;
    fs::create_dir_all(&out).stage("output")?;
    let echo = serde_json::to_string_pretty(cfg).map_err(|e| Failure::new("config", e))?;
    fs::write(out.join("config.json"), echo + "\n").stage("output")?;
    match command {
        Command::TrainToy => train(cfg, &out),
        Command::Eval => eval(cfg, &out),
        Command::SynthData => synth(cfg, &out),
        task_command => single_run(task_command, cfg, &out),
    }
}

fn samples(cfg: &RunConfig, seconds: f64) -> usize {
    seconds_to_samples(seconds, cfg.sample_rate)
}

fn load_input(path: Option<&PathBuf>, cfg: &RunConfig, what: &str) -> Result<Signal, Failure> {
    let path = path.ok_or_else(|| Failure::new("config", format!("{what} requires an input WAV (--input)")))?;
    let s = read_wav(path).map_err(|e| Failure::new("input", format!("{}: {e}", path.display())))?;
    if s.sample_rate() != cfg.sample_rate {
        return Err(Failure::new(
            "input",
            format!("{} has rate {} Hz, configuration expects {} Hz", path.display(), s.sample_rate(), cfg.sample_rate),
        ));
    }
    Ok(s)
}

fn prepare(command: Command, cfg: &RunConfig) -> Result<Prepared, Failure> {
    let total = samples(cfg, cfg.total_seconds);
    let rate = cfg.sample_rate;
    let plain = |task| Prepared { task, reference: None, probe: None };
    Ok(match command {
        Command::Generate => plain(unconditional_task(total, rate).stage("task")?),
        Command::Continue => {
            let input = load_input(cfg.input.as_ref(), cfg, "continue")?;
            let prompt_len = samples(cfg, cfg.prompt_seconds);
            if input.len() < prompt_len {
                return Err(Failure::new(
                    "task",
                    format!("input has {} samples, prompt needs {prompt_len}", input.len()),
                ));
            }
            let prompt = input.with_samples(input.samples()[..prompt_len].to_vec()).stage("task")?;
            let reference = (input.len() >= total)
                .then(|| input.with_samples(input.samples()[..total].to_vec()))
                .transpose()
                .stage("task")?;
            Prepared { task: continuation_task(&prompt, total).stage("task")?, reference, probe: None }
        }
        Command::Infill | Command::Regen => {
            let input = load_input(cfg.input.as_ref(), cfg, command.name())?;
            let (start, len) = centered_hole(input.len(), samples(cfg, cfg.hole_seconds));
            let task = if command == Command::Infill {
                infill_task(&input, start, len)
            } else {
                regenerate_task(&input, start, len, cfg.k)
            }
            .stage("task")?;
            Prepared { task, reference: Some(input), probe: None }
        }
        Command::Transition => {
            let a = load_input(cfg.input.as_ref(), cfg, "transition")?;
            let b = load_input(cfg.input_b.as_ref(), cfg, "transition (--input-b)")?;
            let fade = samples(cfg, cfg.fade_seconds);
            let context = total.saturating_sub(fade) / 2;
            let task = transition_task(&a, &b, context, context, fade, cfg.k).stage("task")?;
            let reference = task.xbar().cloned();
            Prepared { task, reference, probe: None }
        }
        Command::GuideEmbed => {
            let reference = load_input(cfg.input.as_ref(), cfg, "guide-embed")?;
            let emb = Arc::new(ToyEmbedder::new(cfg.embedder_seed, reference.len(), cfg.embedding_dim).stage("task")?);
            let task = embedder_guidance_task(&reference, emb.clone()).stage("task")?;
            Prepared { task, reference: None, probe: Some(Probe::Embedder(emb)) }
        }
        Command::GuideClass => {
            let cls = Arc::new(ToyClassifier::new(cfg.embedder_seed, total, cfg.labels.len()).stage("task")?);
            let task = classifier_guidance_task(&cfg.labels, cls.clone(), rate).stage("task")?;
            Prepared { task, reference: None, probe: Some(Probe::Classifier(cls)) }
        }
        Command::TrainToy | Command::Eval | Command::SynthData => {
            return Err(Failure::new("config", format!("{} is not a sampling task", command.name())))
        }
    })
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Failure::new("input", format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "wav"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::new("input", format!("no WAV files in {}", dir.display())));
    }
    Ok(files)
}

fn build_denoiser(cfg: &RunConfig, n: usize) -> Result<Box<dyn Denoiser>, Failure> {
    let d: Box<dyn Denoiser> = match &cfg.denoiser {
        DenoiserChoice::Gaussian { variance, rho: None } => {
            Box::new(GaussianDenoiser::new(&GaussianPrior::isotropic(vec![0.0; n], *variance).stage("denoiser")?))
        }
        DenoiserChoice::Gaussian { variance, rho: Some(rho) } => {
            if n > MAX_DENSE_PRIOR {
                return Err(Failure::new(
                    "denoiser",
                    format!("AR(1) prior needs a dense {n}x{n} eigendecomposition; limit is {MAX_DENSE_PRIOR}"),
                ));
            }
            Box::new(GaussianDenoiser::new(&GaussianPrior::ar1(n, *rho, *variance).stage("denoiser")?))
        }
        DenoiserChoice::Gmm { means_dir, variance } => {
            let means = wav_files(means_dir)?
                .iter()
                .map(|p| {
                    read_wav(p)
                        .map(Signal::into_samples)
                        .map_err(|e| Failure::new("denoiser", format!("{}: {e}", p.display())))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let weights = vec![1.0 / means.len() as f64; means.len()];
            Box::new(GmmDenoiser::new(weights, means, *variance).stage("denoiser")?)
        }
        DenoiserChoice::Mlp { path } => {
            let file =
                fs::File::open(path).map_err(|e| Failure::new("denoiser", format!("{}: {e}", path.display())))?;
            Box::new(MlpDenoiser::read_from(std::io::BufReader::new(file)).stage("denoiser")?)
        }
    };
    if !d.supports_len(n) {
        return Err(Failure::new("denoiser", format!("denoiser cannot process signals of {n} samples")));
    }
    Ok(d)
}

/// Guidance-only tasks have no selection mask, so consistency is switched off for them.
fn guidance_for(cfg: &RunConfig, task: &TaskSpec, steps: usize) -> GuidanceConfig {
    let mut g = cfg.guidance(steps);
    if g.data_consistency && !task.supports_consistency() {
        log::info!("data consistency disabled: {} task has no selection mask", task.kind().name());
        g.data_consistency = false;
    }
    g
}

fn task_metrics(p: &Prepared, x: &Signal, trace: &SamplerTrace) -> Result<Vec<(String, f64)>, Failure> {
    let mut m = Vec::new();
    if let Some(last) = trace.records.last() {
        m.push(("final_guidance_loss".to_string(), last.guidance_loss));
    }
    if let Some(mask) = p.task.mask() {
        let err = mask.apply(x.samples()).iter().zip(p.task.y()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        m.push(("context_max_abs_error".into(), err));
    }
    if let Some(r) = &p.reference {
        if r.len() == x.len() {
            let mel = MelConfig { sample_rate: x.sample_rate(), ..MelConfig::default() };
            m.push(("mel_distance".into(), mel_reconstruction_distance(x, r, &mel).stage("metrics")?));
        }
    }
    match &p.probe {
        Some(Probe::Embedder(e)) => {
            let d = e.apply(x.samples()).iter().zip(p.task.y()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            m.push(("embedding_l2".into(), d));
        }
        Some(Probe::Classifier(c)) => {
            let probs = c.apply(x.samples());
            m.push((
                "class_kld".into(),
                class_kld(&[p.task.y().to_vec()], std::slice::from_ref(&probs)).stage("metrics")?,
            ));
            m.push(("mean_class_probability".into(), probs.iter().sum::<f64>() / probs.len() as f64));
        }
        None => {}
    }
    let rms = (x.samples().iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    m.push(("rms".into(), rms));
    Ok(m)
}

fn write_csv_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<(), Failure> {
    let file = fs::File::create(path).map_err(|e| Failure::new("output", format!("{}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| std::io::Write::flush(&mut w)).stage("output")
}

fn write_outputs(dir: &Path, x: &Signal, trace: &SamplerTrace) -> Result<(), Failure> {
    fs::create_dir_all(dir).stage("output")?;
    write_wav(dir.join("output.wav"), x).stage("output")?;
    write_csv_file(&dir.join("trace.csv"), |w| trace.write_csv(w))
}

fn single_run(command: Command, cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let p = prepare(command, cfg)?;
    let denoiser = build_denoiser(cfg, p.task.len())?;
    let g = guidance_for(cfg, &p.task, cfg.sampler.steps);
    g.validate(&p.task, denoiser.as_ref()).stage("config")?;
    let (x, trace) = sample(denoiser.as_ref(), &p.task, &g, &mut run_rng(cfg.seed, 0)).stage("sampling")?;
    write_outputs(out, &x, &trace)?;
    let rows: Vec<MetricRow> = task_metrics(&p, &x, &trace)?
        .into_iter()
        .map(|(metric, value)| MetricRow {
            task: p.task.kind().name().into(),
            metric,
            value,
            n_samples: 1,
            seed: cfg.seed,
        })
        .collect();
    write_csv_file(&out.join("metrics.csv"), |w| write_metrics_csv(&rows, w))
}

fn eval(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let command = Command::from_name(&cfg.eval.task)
        .ok_or_else(|| Failure::new("config", format!("eval task {:?} is not a sampling subcommand", cfg.eval.task)))?;
    if cfg.eval.runs == 0 || cfg.eval.steps.is_empty() {
        return Err(Failure::new("config", "eval needs at least one run and one step count"));
    }
    let p = prepare(command, cfg)?;
    let denoiser = build_denoiser(cfg, p.task.len())?;
    let mut rows = Vec::new();
    for &steps in &cfg.eval.steps {
        let g = guidance_for(cfg, &p.task, steps);
        let runs =
            sample_batch(denoiser.as_ref(), &p.task, &g, cfg.eval.runs, Parallelism::default()).stage("sampling")?;
        let mut sums: Vec<(String, f64)> = Vec::new();
        for (i, (x, trace)) in runs.iter().enumerate() {
            write_outputs(&out.join(format!("steps-{steps}")).join(format!("run-{i:03}")), x, trace)?;
            for (j, (name, v)) in task_metrics(&p, x, trace)?.into_iter().enumerate() {
                if i == 0 {
                    sums.push((name, v));
                } else {
                    sums[j].1 += v;
                }
            }
        }
        for (name, total) in sums {
            rows.push(MetricRow {
                task: p.task.kind().name().into(),
                metric: format!("{name}_steps_{steps}"),
                value: total / runs.len() as f64,
                n_samples: runs.len(),
                seed: cfg.seed,
            });
        }
    }
    write_csv_file(&out.join("metrics.csv"), |w| write_metrics_csv(&rows, w))
}

fn training_blocks(cfg: &RunConfig) -> Result<Vec<Signal>, Failure> {
    let block = cfg.train.block;
    if block == 0 {
        return Err(Failure::new("config", "training block must be at least one sample"));
    }
    let sources = match &cfg.train.data_dir {
        Some(dir) => wav_files(dir)?
            .iter()
            .map(|p| read_wav(p).map_err(|e| Failure::new("input", format!("{}: {e}", p.display()))))
            .collect::<Result<Vec<_>, _>>()?,
        None => synth_params(cfg)?.corpus(cfg.synth.count, &mut ChaCha8Rng::seed_from_u64(cfg.seed)).stage("input")?,
    };
    let blocks: Vec<Signal> = sources
        .iter()
        .flat_map(|s| s.samples().chunks_exact(block).map(|c| Signal::from_vec(c.to_vec())).collect::<Vec<_>>())
        .collect::<gdiff_core::Result<_>>()
        .stage("input")?;
    if blocks.is_empty() {
        return Err(Failure::new("input", format!("no training file holds a full block of {block} samples")));
    }
    Ok(blocks)
}

fn train(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let blocks = training_blocks(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mlp_cfg = MlpConfig {
        data_dim: cfg.train.block,
        hidden_width: cfg.train.hidden_width,
        hidden_layers: cfg.train.hidden_layers,
    };
    let mut model = MlpDenoiser::new(mlp_cfg, &mut rng).stage("denoiser")?;
    let eval_seed = cfg.seed ^ 0x5eed;
    let eval_set = &blocks[..blocks.len().min(512)];
    let before = v_loss(&model, eval_set, &mut ChaCha8Rng::seed_from_u64(eval_seed)).stage("training")?;
    let tc = TrainConfig {
        steps: cfg.train.steps,
        learning_rate: cfg.train.learning_rate,
        batch_size: cfg.train.batch_size,
        ..TrainConfig::default()
    };
    let log = train_toy(&mut model, &blocks, &tc, &mut rng).stage("training")?;
    let after = v_loss(&model, eval_set, &mut ChaCha8Rng::seed_from_u64(eval_seed)).stage("training")?;

    let tmp = out.join("model.bin.tmp");
    let file = fs::File::create(&tmp).stage("output")?;
    let mut w = BufWriter::new(file);
    model.write_to(&mut w).stage("output")?;
    std::io::Write::flush(&mut w).stage("output")?;
    drop(w);
    fs::rename(&tmp, out.join("model.bin")).stage("output")?;
    write_csv_file(&out.join("train_log.csv"), |w| {
        use std::io::Write;
        writeln!(w, "step,loss")?;
        for (i, l) in log.losses.iter().enumerate() {
            writeln!(w, "{i},{l}")?;
        }
        Ok(())
    })?;
    let row = |metric: &str, value| MetricRow {
        task: "train_toy".into(),
        metric: metric.into(),
        value,
        n_samples: eval_set.len(),
        seed: cfg.seed,
    };
    let rows = vec![row("v_loss_initial", before), row("v_loss_final", after)];
    write_csv_file(&out.join("metrics.csv"), |w| write_metrics_csv(&rows, w))
}

fn synth_params(cfg: &RunConfig) -> Result<SynthParams, Failure> {
    let s = &cfg.synth;
    let rate = cfg.sample_rate;
    let len = samples(cfg, cfg.total_seconds);
    let p = match s.kind.as_str() {
        "sine_mix" => {
            SynthParams::SineMix { frequencies: s.frequencies.clone(), amplitude: s.amplitude, len, sample_rate: rate }
        }
        "ar1_gaussian" => SynthParams::Ar1Gaussian { rho: s.rho, variance: s.variance, len, sample_rate: rate },
        "gmm" => {
            if s.components == 0 || s.frequencies.is_empty() {
                return Err(Failure::new("config", "gmm corpus needs at least one component and one frequency"));
            }
            // Component c is a pure tone at frequencies[c % len].
            let means = (0..s.components)
                .map(|c| {
                    let f = s.frequencies[c % s.frequencies.len()];
                    (0..len)
                        .map(|i| s.amplitude * (2.0 * std::f64::consts::PI * f * i as f64 / rate as f64).sin())
                        .collect()
                })
                .collect();
            SynthParams::Gmm { weights: vec![1.0; s.components], means, variance: s.variance, sample_rate: rate }
        }
        other => {
            return Err(Failure::new(
                "config",
                format!("unknown corpus kind {other:?} (sine_mix | ar1_gaussian | gmm)"),
            ))
        }
    };
    p.validate().stage("config")?;
    Ok(p)
}

#[derive(Serialize)]
struct ManifestEntry {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    kind: &'a str,
    params: &'a crate::config::SynthSection,
    seed: u64,
    count: usize,
    sample_rate: u32,
    channels: u16,
    samples_per_file: usize,
    files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let params = synth_params(cfg)?;
    let corpus = params.corpus(cfg.synth.count, &mut ChaCha8Rng::seed_from_u64(cfg.seed)).stage("synthesis")?;
    let mut files = Vec::with_capacity(corpus.len());
    for (i, s) in corpus.iter().enumerate() {
        let name = format!("item-{i:04}.wav");
        let path = out.join(&name);
        write_wav(&path, s).stage("output")?;
        files.push(ManifestEntry { file: name, sha256: sha256_hex(&fs::read(&path).stage("output")?) });
    }
    let manifest = Manifest {
        kind: params.name(),
        params: &cfg.synth,
        seed: cfg.seed,
        count: corpus.len(),
        sample_rate: cfg.sample_rate,
        channels: 1,
        samples_per_file: samples(cfg, cfg.total_seconds),
        files,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::new("output", e))?;
    fs::write(out.join("manifest.json"), text + "\n").stage("output")
}
