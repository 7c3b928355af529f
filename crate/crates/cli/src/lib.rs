//! The `duohand` command set.
//!
//! Every command resolves a [`Config`] (defaults, then `--config`, then
//! `--set`, then dedicated flags), writes its artifacts under `run.out_dir`
//! and finishes with a provenance file listing the configuration, seeds and
//! the checksums of every file it read or wrote.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use duohand_core::config::{Config, KEYS};
use duohand_core::CoreError;

mod commands;
mod provenance;
pub mod selftest;

pub use commands::{eval_pred_column, PredColumn};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Numerical(_) => "numerical",
        }
    }

    /// The single line printed on failure.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace('\n', " ");
        format!("error[{}]: {msg}", self.code())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        use duohand_nn::NnError;
        let msg = e.to_string();
        match e {
            CoreError::Config(_) | CoreError::InvalidParams(_) => CliError::Config(msg),
            CoreError::Io(_) | CoreError::Corpus(_) | CoreError::Checksum(_) => CliError::Io(msg),
            CoreError::Nn(NnError::Format(_) | NnError::Checksum | NnError::Io(_) | NnError::MissingParam(_)) => {
                CliError::Io(msg)
            }
            _ => CliError::Numerical(msg),
        }
    }
}

impl From<duohand_nn::NnError> for CliError {
    fn from(e: duohand_nn::NnError) -> Self {
        CoreError::from(e).into()
    }
}

pub fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn keys_help() -> String {
    let mut s = String::from("Config keys (file `key = value` lines or --set key=value):\n");
    for k in KEYS {
        let default = if k.default.is_empty() { "\"\"" } else { k.default };
        s.push_str(&format!("  {:<32} [{default}] {}\n", k.key, k.doc));
    }
    s.push_str("\nFlags --jobs, --out and --seed are shorthands for run.jobs, run.out_dir and the command's seed key.");
    s
}

#[derive(Debug, Parser)]
#[command(name = "duohand", version, about = "Two-hand penetration refinement toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads (run.jobs).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory (run.out_dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct Seeded {
    #[command(flatten)]
    pub common: Common,
    /// Seed of this command (synth.seed, diffusion.seed or fusion.seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the train, validation and test corpora.
    #[command(after_help = keys_help())]
    Synth(Seeded),
    /// Train the conditional denoiser.
    #[command(name = "train-diffusion", after_help = keys_help())]
    TrainDiffusion(Seeded),
    /// Distill the prior token encoders.
    #[command(name = "train-fusion", after_help = keys_help())]
    TrainFusion(Seeded),
    /// Gate and refine a corpus with collision-guided sampling.
    #[command(after_help = keys_help())]
    Refine(Seeded),
    /// Compare predictions with ground truth.
    #[command(after_help = keys_help())]
    Eval(Common),
    /// Write one record's meshes as OBJ files.
    #[command(name = "export-mesh", after_help = keys_help())]
    ExportMesh(Common),
    /// Run the built-in oracle checks.
    #[command(after_help = keys_help())]
    Selftest(Common),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::TrainDiffusion(_) => "train-diffusion",
            Command::TrainFusion(_) => "train-fusion",
            Command::Refine(_) => "refine",
            Command::Eval(_) => "eval",
            Command::ExportMesh(_) => "export-mesh",
            Command::Selftest(_) => "selftest",
        }
    }

    fn seed_key(&self) -> Option<&'static str> {
        match self {
            Command::Synth(_) => Some("synth.seed"),
            Command::TrainDiffusion(_) | Command::Refine(_) => Some("diffusion.seed"),
            Command::TrainFusion(_) => Some("fusion.seed"),
            _ => None,
        }
    }

    fn parts(&self) -> (&Common, Option<u64>) {
        match self {
            Command::Synth(s) | Command::TrainDiffusion(s) | Command::TrainFusion(s) | Command::Refine(s) => {
                (&s.common, s.seed)
            }
            Command::Eval(c) | Command::ExportMesh(c) | Command::Selftest(c) => (c, None),
        }
    }

    /// Defaults, then the config file, then `--set`, then flags.
    pub fn resolve_config(&self) -> CliResult<Config> {
        let (common, seed) = self.parts();
        let mut cfg = Config::default();
        if let Some(path) = &common.config {
            let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            cfg.apply_text(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        }
        for s in &common.set {
            cfg.apply_override(s)?;
        }
        if let Some(j) = common.jobs {
            cfg.set("run.jobs", &j.to_string())?;
        }
        if let Some(out) = &common.out {
            cfg.set("run.out_dir", &out.to_string_lossy())?;
        }
        if let (Some(seed), Some(key)) = (seed, self.seed_key()) {
            cfg.set(key, &seed.to_string())?;
        }
        Ok(cfg)
    }
}

/// Runs a parsed command line. Progress goes to stderr.
pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = cli.command.resolve_config()?;
    commands::dispatch(cli.command.name(), &cfg)
}

/// Runs `duohand <args>` in process.
pub fn run_args<I, S>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(std::iter::once(std::ffi::OsString::from("duohand")).chain(args.into_iter().map(Into::into)))
        .map_err(|e| CliError::Config(e.to_string()))?;
    run(&cli)
}
