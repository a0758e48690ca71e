//! Command-line front end. Exit codes: 0 success, 2 usage, 3 runtime abort.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use super::{cmd_ablate, cmd_curve, cmd_eval, cmd_train, AblationVariant, EvalError, EvalSpec};
use super::{DEFAULT_EVAL_EPISODES, DEFAULT_EVAL_STEPS};
use crate::config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "acdzero",
    about = "Train and evaluate latent-search cyber defenders"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy and write checkpoints and metrics.
    Train {
        /// TOML run configuration; the desk setting when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides `train.episodes`.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to `config.toml` beside the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_EVAL_EPISODES)]
        episodes: usize,
        #[arg(long, default_value_t = DEFAULT_EVAL_STEPS)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Act through search at the evaluation temperature instead of the actor.
        #[arg(long)]
        with_search: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one ablation variant and evaluate it.
    Ablate {
        #[arg(long, value_enum)]
        variant: AblationVariant,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides `train.episodes`.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_EVAL_EPISODES)]
        eval_episodes: usize,
        #[arg(long, default_value_t = DEFAULT_EVAL_STEPS)]
        eval_steps: usize,
        #[arg(long, default_value_t = 0)]
        eval_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average metrics CSVs into a smoothed learning curve.
    Curve {
        /// Glob matching the runs' metrics CSVs.
        #[arg(long = "in")]
        input: String,
        #[arg(long, default_value_t = 1)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run_config(path: Option<&Path>, episodes: Option<usize>) -> Result<RunConfig, EvalError> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::desk(),
    };
    if let Some(n) = episodes {
        cfg.train.episodes = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), EvalError> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn execute(cli: Cli) -> Result<(), EvalError> {
    match cli.command {
        Command::Train {
            config,
            seed,
            episodes,
            out,
        } => {
            let cfg = run_config(config.as_deref(), episodes)?;
            print_json(&cmd_train(&cfg, seed, &out)?)
        }
        Command::Eval {
            checkpoint,
            config,
            episodes,
            steps,
            seed,
            with_search,
            out,
        } => {
            if !checkpoint.is_file() {
                return Err(EvalError::Input(format!(
                    "no checkpoint at {}",
                    checkpoint.display()
                )));
            }
            if steps == 0 {
                return Err(EvalError::Input("--steps must be positive".into()));
            }
            let spec = EvalSpec {
                episodes,
                steps,
                seed,
                with_search,
            };
            let summary = cmd_eval(&checkpoint, config.as_deref(), &spec, &out)?;
            print_json(&summary.metrics)
        }
        Command::Ablate {
            variant,
            config,
            seed,
            episodes,
            eval_episodes,
            eval_steps,
            eval_seed,
            out,
        } => {
            if eval_steps == 0 {
                return Err(EvalError::Input("--eval-steps must be positive".into()));
            }
            let cfg = run_config(config.as_deref(), episodes)?;
            let spec = EvalSpec {
                episodes: eval_episodes,
                steps: eval_steps,
                seed: eval_seed,
                with_search: false,
            };
            let summary = cmd_ablate(variant, &cfg, seed, &spec, &out)?;
            print_json(&summary.metrics)
        }
        Command::Curve { input, window, out } => {
            let rows = cmd_curve(&input, window, &out)?;
            log::info!("wrote {} rows to {}", rows.len(), out.display());
            Ok(())
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
