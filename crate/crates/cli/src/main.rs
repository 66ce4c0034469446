//! `gdiff`: guided diffusion sampling on synthetic audio from the command line.
//!
//! Every subcommand takes an optional JSON config (`--config`) plus flag overrides and
//! writes its artifacts, together with the effective config, to one output directory.

mod config;
mod run;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};
use run::{execute, Command, Failure};

#[derive(Debug, Parser)]
#[command(name = "gdiff", version, about = "Guided diffusion sampling for audio editing tasks")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Unconditional sample from the prior.
    Generate(Overrides),
    /// Extend the start of --input.
    Continue(Overrides),
    /// Fill a centred hole in --input.
    Infill(Overrides),
    /// Re-generate a centred hole starting from a noisy copy of the original.
    Regen(Overrides),
    /// Generate a transition from --input into --input-b.
    Transition(Overrides),
    /// Steer a sample towards the toy embedding of --input.
    GuideEmbed(Overrides),
    /// Steer a sample towards --labels under the toy classifier.
    GuideClass(Overrides),
    /// Train the MLP denoiser on a WAV directory or a synthetic corpus.
    TrainToy(Overrides),
    /// Sweep step counts over several seeded runs and report averaged metrics.
    Eval(Overrides),
    /// Write a seeded synthetic corpus with a manifest.
    SynthData(Overrides),
}

impl Sub {
    fn split(&self) -> (Command, &Overrides) {
        match self {
            Sub::Generate(o) => (Command::Generate, o),
            Sub::Continue(o) => (Command::Continue, o),
            Sub::Infill(o) => (Command::Infill, o),
            Sub::Regen(o) => (Command::Regen, o),
            Sub::Transition(o) => (Command::Transition, o),
            Sub::GuideEmbed(o) => (Command::GuideEmbed, o),
            Sub::GuideClass(o) => (Command::GuideClass, o),
            Sub::TrainToy(o) => (Command::TrainToy, o),
            Sub::Eval(o) => (Command::Eval, o),
            Sub::SynthData(o) => (Command::SynthData, o),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, overrides) = cli.command.split();

    let mut cfg = match RunConfig::load(overrides.config.as_deref()) {
        Ok(cfg) => cfg,
        Err(message) => return fail(&Failure::new("config", message), None),
    };
    overrides.apply(&mut cfg);
    cfg.resolve_output_dir(command.name());

    match execute(command, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => fail(&f, cfg.output_dir.as_deref()),
    }
}

/// Prints the error JSON to stderr, and to `error.json` when the output directory exists.
fn fail(f: &Failure, out: Option<&std::path::Path>) -> ExitCode {
    let json = serde_json::to_string(f).unwrap_or_else(|_| format!("{{\"stage\":\"{}\"}}", f.stage));
    eprintln!("{json}");
    if let Some(dir) = out.filter(|d| d.is_dir()) {
        let _ = std::fs::write(dir.join("error.json"), json + "\n");
    }
    ExitCode::FAILURE
}
