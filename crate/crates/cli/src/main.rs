use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use wdrank_cli::config::{load_config, parse_config, ExperimentConfig, Profile};
use wdrank_cli::run::{self, BoundsArgs, CensusArgs, FamilyKind};
use wdrank_cli::ConfigError;
use wdrank_core::analysis::CertificateMode;

const AFTER_HELP: &str = "\
Config files hold flat `key = value` lines; `#` starts a comment. Values from
--set override the file, which overrides the --profile defaults.

Environment:
  WDRANK_DATA_DIR  Directory that relative dataset paths (csv, idx_images,
                   idx_labels) are resolved against. --data-dir overrides it.

On failure a JSON object {\"error\": {\"kind\", \"message\", ...}} is written to
stderr and the exit code is nonzero.";

#[derive(Parser, Debug)]
#[command(name = "wdrank", version, about = "Weight-decay low-rank experiments for two-layer ReLU networks")]
#[command(after_help = AFTER_HELP)]
struct Cli {
    /// Directory all outputs are written to.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Base directory for relative dataset paths.
    #[arg(long, global = true, env = "WDRANK_DATA_DIR")]
    data_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Experiment config file.
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Hyperparameter preset applied before the file.
    #[arg(long, value_enum)]
    profile: Option<Profile>,

    /// Override a config key, e.g. `--set batch_size=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        match &self.config {
            Some(path) => load_config(path, self.profile, &self.overrides),
            None => parse_config("", self.profile, &self.overrides),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one network; writes train_log.csv, checkpoint.txt and summary.json.
    Train(ConfigArgs),
    /// Train over the sweep_mu_v × sweep_batch_size × sweep_seed grid.
    Sweep(ConfigArgs),
    /// Batch-gradient norms of a checkpoint over a batch family.
    Census {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "epoch")]
        family: FamilyKind,
        /// Epoch whose partition is used (default: the last training epoch).
        #[arg(long)]
        epoch: Option<usize>,
        /// Number of batches for the random family.
        #[arg(long, default_value_t = 1000)]
        count: usize,
        /// Seed of the family (default: the training seed).
        #[arg(long)]
        family_seed: Option<u64>,
        /// Distinguished sample of the swap family.
        #[arg(long, default_value_t = 0)]
        i1: usize,
    },
    /// Build a low-rank certificate for a checkpoint, or re-check one.
    Certify {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, required_unless_present = "verify")]
        checkpoint: Option<PathBuf>,
        /// Certificate sample for constant decay.
        #[arg(long, conflicts_with = "pair")]
        i1: Option<usize>,
        /// Certificate samples `I,J` for variable decay.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        pair: Option<Vec<usize>>,
        /// Re-check a certificate.json instead of building one.
        #[arg(long)]
        verify: Option<PathBuf>,
    },
    /// Singular values of V with a Gaussian baseline of the same shape.
    Spectrum {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        baseline_seed: u64,
    },
    /// Evaluate the full-rank and low-rank generalization bounds.
    Bounds(BoundsArgs),
    /// Write a synthetic teacher dataset as CSV.
    GenData {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        samples: usize,
        #[arg(long, default_value_t = 2)]
        rank: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn execute(cli: Cli) -> Result<()> {
    let out = cli.out_dir.as_path();
    let data_dir = cli.data_dir.as_deref();
    match cli.command {
        Command::Train(c) => print(&run::cmd_train(&c.resolve()?, data_dir, out)?),
        Command::Sweep(c) => {
            let rows = run::cmd_sweep(&c.resolve()?, data_dir, out)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            eprintln!("{} grid points, {failed} failed", rows.len());
            print(&rows)
        }
        Command::Census {
            config,
            checkpoint,
            family,
            epoch,
            count,
            family_seed,
            i1,
        } => {
            let cfg = config.resolve()?;
            let net = run::read_checkpoint(&checkpoint)?;
            let args = CensusArgs {
                family,
                epoch,
                count,
                family_seed,
                i1,
            };
            print(&run::cmd_census(&cfg, &net, &args, data_dir, out)?)
        }
        Command::Certify {
            config,
            checkpoint,
            i1,
            pair,
            verify,
        } => {
            if let Some(path) = verify {
                return print(&run::cmd_verify(&path)?);
            }
            let cfg = config.resolve()?;
            let net = run::read_checkpoint(checkpoint.as_deref().unwrap_or(Path::new("")))?;
            let mode = match (i1, pair) {
                (Some(i), _) => Some(CertificateMode::ConstantG { i1: Some(i) }),
                (None, Some(p)) => match p[..] {
                    [a, b] => Some(CertificateMode::VariableG { pair: Some((a, b)) }),
                    _ => bail!("--pair takes exactly two indices"),
                },
                (None, None) => None,
            };
            print(&run::cmd_certify(&cfg, &net, mode, data_dir, out)?)
        }
        Command::Spectrum { checkpoint, baseline_seed } => {
            let net = run::read_checkpoint(&checkpoint)?;
            print(&run::cmd_spectrum(&net, baseline_seed, out)?)
        }
        Command::Bounds(args) => print(&run::cmd_bounds(&args, out)?),
        Command::GenData {
            dim,
            samples,
            rank,
            noise,
            seed,
        } => print(&run::cmd_gen_data(dim, samples, rank, noise, seed, out)?),
    }
}

#[derive(Serialize)]
struct ErrorBody {
    kind: String,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<usize>,
}

fn error_body(err: &anyhow::Error) -> ErrorBody {
    let message = format!("{err:#}");
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ConfigError>() {
            return ErrorBody {
                kind: e.kind().into(),
                message,
                line: e.line(),
            };
        }
        if let Some(e) = cause.downcast_ref::<wdrank_core::Error>() {
            return ErrorBody {
                kind: e.kind().into(),
                message,
                line: None,
            };
        }
    }
    ErrorBody {
        kind: "error".into(),
        message,
        line: None,
    }
}

fn emit_error(body: ErrorBody) {
    let json = serde_json::json!({ "error": body });
    eprintln!("{json}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            emit_error(ErrorBody {
                kind: "usage".into(),
                message: e.to_string().trim_end().to_string(),
                line: None,
            });
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            emit_error(error_body(&err));
            ExitCode::FAILURE
        }
    }
}
