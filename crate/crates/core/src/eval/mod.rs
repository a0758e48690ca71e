//! Evaluation, ablations and learning curves, plus the command layer the
//! binary wraps.

pub mod cli;
mod curve;
mod metrics;

pub use curve::{learning_curve, read_curve_inputs, CurveRow};
pub use metrics::{compute_metrics, summarize, EpisodeMetrics, Stat};

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicU64;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::net::Policy;
use crate::sim::replay::{Replay, ReplayError};
use crate::sim::rng::{mix, Purpose};
use crate::sim::NUM_AGENTS;
use crate::tensor::CheckpointError;
use crate::train::{run_episode, train, Acting, Behavior, RunFiles, TrainError};

pub const SUMMARY_SCHEMA: u32 = 1;
pub const DEFAULT_EVAL_EPISODES: usize = 100;
pub const DEFAULT_EVAL_STEPS: usize = 500;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    ReplayLog(#[from] ReplayError),
    #[error("bad replay: {0}")]
    Replay(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad glob pattern: {0}")]
    Pattern(#[from] glob::PatternError),
    #[error("{0}")]
    Input(String),
}

impl EvalError {
    /// Process exit code: 2 for bad input, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            EvalError::Config(_) | EvalError::Pattern(_) | EvalError::Input(_) => 2,
            _ => 3,
        }
    }
}

/// Configuration deltas that remove one mechanism each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AblationVariant {
    Full,
    /// Actions from the actor; no distillation, value regression only.
    NoMcts,
    NoDistill,
    NoNoise,
    FixedC1,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::Full,
        AblationVariant::NoMcts,
        AblationVariant::NoDistill,
        AblationVariant::NoNoise,
        AblationVariant::FixedC1,
    ];

    pub fn apply(self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        match self {
            AblationVariant::Full => {}
            AblationVariant::NoMcts => {
                c.train.behavior = Behavior::Actor;
                c.train.lambda_pi = 0.0;
                c.train.unroll = 0;
            }
            AblationVariant::NoDistill => c.train.lambda_pi = 0.0,
            AblationVariant::NoNoise => c.search.noise_fraction = 0.0,
            AblationVariant::FixedC1 => c.search.dynamic_c1 = false,
        }
        c
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoMcts => "no-mcts",
            AblationVariant::NoDistill => "no-distill",
            AblationVariant::NoNoise => "no-noise",
            AblationVariant::FixedC1 => "fixed-c1",
        }
    }
}

/// Evaluation protocol settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub episodes: usize,
    pub steps: usize,
    pub seed: u64,
    pub with_search: bool,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            episodes: DEFAULT_EVAL_EPISODES,
            steps: DEFAULT_EVAL_STEPS,
            seed: 0,
            with_search: false,
        }
    }
}

/// Per-episode metrics and logs of an evaluation run.
pub struct Evaluation {
    pub metrics: Vec<EpisodeMetrics>,
    pub replays: Vec<Replay>,
}

/// Seed of evaluation episode `index`; shared across variants so that
/// comparisons are paired.
pub fn eval_episode_seed(seed: u64, index: usize) -> u64 {
    mix(&[seed, index as u64, Purpose::Eval as u64])
}

/// Runs `spec.episodes` episodes of `spec.steps` steps. Without search the
/// actor samples directly; with search the visit policy at the evaluation
/// temperature chooses.
pub fn evaluate(
    policy: &Policy,
    cfg: &RunConfig,
    spec: &EvalSpec,
) -> Result<Evaluation, EvalError> {
    let mut sim = cfg.sim.clone();
    sim.horizon = spec.steps;
    let calls = AtomicU64::new(0);
    let acting = Acting::eval(spec.with_search);
    let replays = (0..spec.episodes)
        .into_par_iter()
        .map(|i| {
            run_episode(
                policy,
                &sim,
                &cfg.search,
                acting,
                eval_episode_seed(spec.seed, i),
                false,
                &calls,
            )
            .map(|e| e.replay)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let metrics = replays
        .iter()
        .map(compute_metrics)
        .collect::<Result<_, _>>()?;
    Ok(Evaluation { metrics, replays })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub schema_version: u32,
    pub checkpoint: Option<String>,
    pub variant: Option<String>,
    pub episodes: usize,
    pub steps: usize,
    pub seed: u64,
    pub with_search: bool,
    pub metrics: BTreeMap<String, Stat>,
}

#[derive(Serialize)]
struct EpisodeRow {
    episode: usize,
    reward: f64,
    clean_host_ratio: f64,
    non_escalated_ratio: f64,
    recovery_precision: Option<f64>,
    mean_ttr: Option<f64>,
    impact_count: usize,
    recovery_error_pct: f64,
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const REPLAYS_FILE: &str = "replays.jsonl";

/// Writes `summary.json`, `episodes.csv` and `replays.jsonl` into `dir`.
pub fn write_evaluation(
    dir: &Path,
    summary: &EvalSummary,
    eval: &Evaluation,
) -> Result<(), EvalError> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(summary)?;
    json.push('\n');
    fs::write(dir.join(SUMMARY_FILE), json)?;
    let mut w = csv::Writer::from_path(dir.join(EPISODES_FILE))?;
    for (episode, m) in eval.metrics.iter().enumerate() {
        w.serialize(EpisodeRow {
            episode,
            reward: m.reward,
            clean_host_ratio: m.clean_host_ratio,
            non_escalated_ratio: m.non_escalated_ratio,
            recovery_precision: m.recovery_precision,
            mean_ttr: m.mean_ttr,
            impact_count: m.impact_count,
            recovery_error_pct: m.recovery_error_pct,
        })?;
    }
    w.flush()?;
    let mut log = BufWriter::new(fs::File::create(dir.join(REPLAYS_FILE))?);
    for r in &eval.replays {
        r.write_to(&mut log)?;
    }
    Ok(())
}

/// Loads a run configuration: an explicit file, else `config.toml` next to
/// the checkpoint, else the defaults.
pub fn config_for_checkpoint(
    checkpoint: &Path,
    explicit: Option<&Path>,
) -> Result<RunConfig, EvalError> {
    if let Some(p) = explicit {
        return Ok(RunConfig::load(p)?);
    }
    let beside = checkpoint.with_file_name("config.toml");
    if beside.exists() {
        Ok(RunConfig::load(&beside)?)
    } else {
        Ok(RunConfig::default())
    }
}

pub fn load_policy(checkpoint: &Path, cfg: &RunConfig) -> Result<Policy, EvalError> {
    let mut policy =
        Policy::new(cfg.net, cfg.train.shared_params, NUM_AGENTS, 0).map_err(TrainError::from)?;
    policy.load_checkpoint(checkpoint)?;
    Ok(policy)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub schema_version: u32,
    pub seed: u64,
    pub episodes: usize,
    pub rounds: usize,
    pub search_calls: u64,
    pub final_mean_reward: Option<f64>,
    pub checkpoint: String,
}

/// Trains and writes checkpoints, `metrics.csv` and `summary.json` to `out`.
pub fn cmd_train(cfg: &RunConfig, seed: u64, out: &Path) -> Result<TrainSummary, EvalError> {
    cfg.validate()?;
    let outcome = train(cfg, seed, Some(out))?;
    let summary = TrainSummary {
        schema_version: SUMMARY_SCHEMA,
        seed,
        episodes: outcome.episodes,
        rounds: outcome.metrics.len(),
        search_calls: outcome.search_calls,
        final_mean_reward: outcome.metrics.last().map(|m| m.mean_reward),
        checkpoint: out.join(RunFiles::MODEL).display().to_string(),
    };
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    fs::write(out.join("train_summary.json"), json)?;
    Ok(summary)
}

pub fn cmd_eval(
    checkpoint: &Path,
    config: Option<&Path>,
    spec: &EvalSpec,
    out: &Path,
) -> Result<EvalSummary, EvalError> {
    let cfg = config_for_checkpoint(checkpoint, config)?;
    let policy = load_policy(checkpoint, &cfg)?;
    let eval = evaluate(&policy, &cfg, spec)?;
    let summary = EvalSummary {
        schema_version: SUMMARY_SCHEMA,
        checkpoint: Some(checkpoint.display().to_string()),
        variant: None,
        episodes: spec.episodes,
        steps: spec.steps,
        seed: spec.seed,
        with_search: spec.with_search,
        metrics: summarize(&eval.metrics),
    };
    write_evaluation(out, &summary, &eval)?;
    Ok(summary)
}

/// Trains the variant with `seed` and evaluates its final actor on the
/// shared evaluation seeds. Training output goes to `out/train`, the
/// evaluation to `out/eval`.
pub fn cmd_ablate(
    variant: AblationVariant,
    base: &RunConfig,
    seed: u64,
    spec: &EvalSpec,
    out: &Path,
) -> Result<EvalSummary, EvalError> {
    let cfg = variant.apply(base);
    let train_dir = out.join("train");
    cmd_train(&cfg, seed, &train_dir)?;
    let policy = load_policy(&train_dir.join(RunFiles::MODEL), &cfg)?;
    let eval = evaluate(&policy, &cfg, spec)?;
    let summary = EvalSummary {
        schema_version: SUMMARY_SCHEMA,
        checkpoint: Some(train_dir.join(RunFiles::MODEL).display().to_string()),
        variant: Some(variant.name().to_string()),
        episodes: spec.episodes,
        steps: spec.steps,
        seed: spec.seed,
        with_search: spec.with_search,
        metrics: summarize(&eval.metrics),
    };
    write_evaluation(&out.join("eval"), &summary, &eval)?;
    Ok(summary)
}

/// Reads every metrics CSV matching `pattern` and writes the windowed curve.
pub fn cmd_curve(pattern: &str, window: usize, out: &Path) -> Result<Vec<CurveRow>, EvalError> {
    let mut paths: Vec<PathBuf> = glob::glob(pattern)?.filter_map(Result::ok).collect();
    paths.sort();
    if paths.is_empty() {
        return Err(EvalError::Input(format!("no files match {pattern}")));
    }
    let runs = read_curve_inputs(&paths)?;
    let rows = learning_curve(&runs, window)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut w = csv::Writer::from_path(out)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}

/// One-sided sign test: probability of at least `wins` successes in `n`
/// fair coin flips.
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    let mut total = 0.0;
    for k in wins..=n {
        total += binomial(n, k);
    }
    total / 2f64.powi(n as i32)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
