//! `dtan`: synthesize data, train alignment models, align, compute
//! barycenters, evaluate and time.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dtan_core::DtanError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] DtanError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Core(e) if e.is_numerical() => 3,
            Self::Core(e) if e.is_data() => 2,
            Self::Core(_) => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "dtan", version, about = "Diffeomorphic temporal alignment of time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Write a synthetic train/test pair with its latent warps.
    Synth,
    /// Train an alignment model on `data.train`.
    Train,
    /// Align `data.test` (or `data.train`) with a trained model.
    Align,
    /// Per-class barycenters of `data.train`.
    Barycenter,
    /// Nearest-centroid accuracy, variance reduction and PCA.
    Eval,
    /// Wall-clock timing of barycenter methods.
    Time,
}

/// Options shared by all commands. Each flag overrides one configuration
/// key; `--set section.key=value` reaches any other.
#[derive(Args, Debug, Default)]
struct Flags {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.lr=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory [output_dir].
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Training data file [data.train].
    #[arg(long, global = true)]
    train: Option<PathBuf>,
    /// Test data file [data.test].
    #[arg(long, global = true)]
    test: Option<PathBuf>,
    /// Model file [data.model].
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Seed [synth.seed for synth, train.seed and model.seed otherwise].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// [train.epochs]
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// [train.batch_size]
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// [train.lr]
    #[arg(long, global = true)]
    lr: Option<f64>,
    /// [loss.kind]
    #[arg(long, global = true)]
    loss: Option<String>,
    /// [model.recurrences]
    #[arg(long, global = true)]
    recurrences: Option<usize>,
    /// [tessellation.n_cells]
    #[arg(long, global = true)]
    n_cells: Option<usize>,
    /// [tessellation.boundary]
    #[arg(long, global = true)]
    boundary: Option<String>,
    /// [barycenter.method]
    #[arg(long, global = true)]
    method: Option<String>,
    /// Comma-separated methods [eval.ncc_methods or timing.methods].
    #[arg(long, global = true, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// [timing.repeats]
    #[arg(long, global = true)]
    repeats: Option<usize>,
}

fn path_value(p: &Option<PathBuf>) -> Option<toml::Value> {
    p.as_ref().map(|p| toml::Value::String(p.to_string_lossy().into_owned()))
}

fn int(v: Option<impl Into<i64>>) -> Option<toml::Value> {
    v.map(|v| toml::Value::Integer(v.into()))
}

fn usize_value(v: Option<usize>) -> Option<toml::Value> {
    int(v.map(|v| v as i64))
}

fn string(v: &Option<String>) -> Option<toml::Value> {
    v.clone().map(toml::Value::String)
}

impl Flags {
    fn explicit(&self, command: Command) -> Vec<(&'static str, Option<toml::Value>)> {
        let seed = int(self.seed.map(|s| s as i64));
        let methods = self
            .methods
            .clone()
            .map(|m| toml::Value::Array(m.into_iter().map(toml::Value::String).collect()));
        let mut out = vec![
            ("output_dir", path_value(&self.out)),
            ("data.train", path_value(&self.train)),
            ("data.test", path_value(&self.test)),
            ("data.model", path_value(&self.model)),
            ("train.epochs", usize_value(self.epochs)),
            ("train.batch_size", usize_value(self.batch_size)),
            ("train.lr", self.lr.map(toml::Value::Float)),
            ("loss.kind", string(&self.loss)),
            ("model.recurrences", usize_value(self.recurrences)),
            ("tessellation.n_cells", usize_value(self.n_cells)),
            ("tessellation.boundary", string(&self.boundary)),
            ("barycenter.method", string(&self.method)),
            ("timing.repeats", usize_value(self.repeats)),
        ];
        if command == Command::Synth {
            out.push(("synth.seed", seed));
        } else {
            out.push(("train.seed", seed.clone()));
            out.push(("model.seed", seed));
        }
        let methods_key = if command == Command::Time { "timing.methods" } else { "eval.ncc_methods" };
        out.push((methods_key, methods));
        out
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.flags.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let config = config::resolve(cli.flags.config.as_deref(), &cli.flags.set, &cli.flags.explicit(cli.command))?;
    let threads = cli.flags.threads;
    match cli.command {
        Command::Synth => commands::synth(&config),
        Command::Train => commands::train(&config),
        Command::Align => commands::align(&config),
        Command::Barycenter => commands::barycenter(&config),
        Command::Eval => commands::eval(&config),
        Command::Time => commands::time(&config, threads),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
