//! Command-line orchestration of the bird-song identification pipeline.

pub mod config;
pub mod pipeline;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use config::{ModelFamily, RunConfig};
use pipeline::Context;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error in `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] birdsong_core::Error),
}

impl CliError {
    pub fn config(key: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            key: key.to_string(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 1,
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

const OVERRIDE_HELP: &str = "Options: --out DIR (required), --config FILE, and any config key as --key VALUE";

#[derive(Debug, Parser)]
#[command(name = "birdsong", version, about = "Bird song identification from spectrogram images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Tf,
    FeFuse,
    ReFuse,
}

impl From<Mode> for ModelFamily {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Tf => ModelFamily::Tf,
            Mode::FeFuse => ModelFamily::FeFuse,
            Mode::ReFuse => ModelFamily::ReFuse,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the seeded synthetic corpus
    Synth(Rest),
    /// Detect syllables in every clip
    Segment(Rest),
    /// Compute STFT, Mel-cepstral and chirplet spectrograms
    Spectrogram(Rest),
    /// Window, render, extract features and split
    Dataset(Rest),
    /// Train a model bundle
    Train {
        #[arg(value_enum)]
        mode: Mode,
        #[command(flatten)]
        rest: Rest,
    },
    /// Evaluate a trained bundle on one split portion
    Eval(Rest),
    /// Run the full transform x duration x model sweep
    Grid(Rest),
    /// Collect evaluation and training summaries
    Report(Rest),
}

#[derive(Debug, clap::Args)]
#[command(after_help = OVERRIDE_HELP)]
struct Rest {
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    args: Vec<String>,
}

/// Splits `--out` and `--config` from the config overrides and resolves the configuration.
fn resolve(args: &[String]) -> Result<Context, CliError> {
    let mut out = None;
    let mut config = None;
    let mut overrides = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let (flag, inline) = match a.split_once('=') {
            Some((f, v)) if f.starts_with("--") => (f, Some(v.to_string())),
            _ => (a.as_str(), None),
        };
        let slot = match flag {
            "--out" => &mut out,
            "--config" => &mut config,
            _ => {
                overrides.push(a.clone());
                continue;
            }
        };
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .cloned()
                .ok_or_else(|| CliError::Usage(format!("`{flag}` needs a value")))?,
        };
        *slot = Some(PathBuf::from(value));
    }
    let out = out.ok_or_else(|| CliError::Usage("missing `--out DIR`".into()))?;
    let mut cfg = match &config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&overrides)?;
    cfg.validate()?;
    Ok(Context::new(cfg, out))
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth(r) => {
            let ctx = resolve(&r.args)?;
            let manifest = pipeline::synth(&ctx)?;
            eprintln!("synth: corpus manifest {}", manifest.display());
        }
        Command::Segment(r) => {
            let ctx = resolve(&r.args)?;
            let n = pipeline::segment(&ctx)?;
            eprintln!("segment: {n} syllables");
        }
        Command::Spectrogram(r) => {
            let ctx = resolve(&r.args)?;
            let n = pipeline::spectrogram(&ctx)?;
            eprintln!("spectrogram: {n} clips x 3 transforms");
        }
        Command::Dataset(r) => {
            let ctx = resolve(&r.args)?;
            for d in pipeline::dataset(&ctx)? {
                eprintln!("dataset: {}", ctx.dataset_dir(d).display());
            }
        }
        Command::Train { mode, rest } => {
            let mut ctx = resolve(&rest.args)?;
            ctx.cfg.model = mode.into();
            let data = pipeline::load_dataset(&ctx, ctx.cfg.duration)?;
            let trained = pipeline::train_model(&ctx, &data, ctx.cfg.model, ctx.cfg.channel, ctx.cfg.duration, None)?;
            let dir = pipeline::save_trained(&ctx, &data, &trained)?;
            eprintln!(
                "train: {} best validation MAP {:.4} at epoch {} -> {}",
                trained.id,
                trained.history.best_map,
                trained.history.best_epoch,
                dir.display()
            );
        }
        Command::Eval(r) => {
            let ctx = resolve(&r.args)?;
            let id = Context::model_id(ctx.cfg.model, ctx.cfg.channel, ctx.cfg.duration);
            let model = pipeline::load_model(&ctx, &id)?;
            let data = pipeline::load_dataset(&ctx, ctx.cfg.duration)?;
            let report = pipeline::eval_model(&ctx, &data, &id, &model, ctx.cfg.eval_split)?;
            for name in report.skipped_classes() {
                eprintln!("eval: class `{name}` has no {} samples, left out of MAP", report.split);
            }
            println!("{}", report.summary_line());
        }
        Command::Grid(r) => {
            let ctx = resolve(&r.args)?;
            for c in pipeline::grid(&ctx)? {
                println!("{},{},{},{:.6}", c.row.model, c.row.channel, c.row.duration_ms, c.row.map);
            }
        }
        Command::Report(r) => {
            let ctx = resolve(&r.args)?;
            let (reports, bundles) = pipeline::report(&ctx)?;
            eprintln!("report: {reports} evaluation reports, {bundles} bundles");
        }
    }
    Ok(())
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
