//! Rollout collection, advantage estimation and optimisation of the joint
//! objective `ppo + λ_π·distill + λ_v·model`.

mod loss;
mod rollout;

pub use loss::{
    compute_advantages, distill_kl, entropy, kl_scalar, model_loss, ppo_loss, ppo_surrogate,
    ppo_surrogate_scalar, total_loss_scalar, LossParts, PROB_FLOOR,
};
pub use rollout::{run_episode, Acting, Behavior, Episode, StepSample, Trajectory};

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::graph::{GraphError, ACTION_FEATS};
use crate::mcts::SearchError;
use crate::net::{LatentNet, Policy};
use crate::sim::rng::{mix, stream, Purpose};
use crate::sim::{SimError, NUM_AGENTS};
use crate::tensor::{Adam, CheckpointError, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("metrics csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("worker {worker} failed: {source}")]
    Worker {
        worker: usize,
        #[source]
        source: Box<TrainError>,
    },
    #[error("non-finite loss or gradient in round {round}; last good checkpoint kept")]
    NonFinite { round: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_pi: f64,
    pub lambda_v: f64,
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Model unroll length `K`.
    pub unroll: usize,
    /// Episodes collected in parallel per round.
    pub workers: usize,
    pub lr: f64,
    pub epochs: usize,
    pub minibatch: usize,
    /// Total training episodes.
    pub episodes: usize,
    pub max_grad_norm: f64,
    /// One model for all defenders instead of one per defender.
    pub shared_params: bool,
    pub entropy_coef: f64,
    pub behavior: Behavior,
    /// Standardise advantages over each round's samples.
    pub normalize_advantages: bool,
    /// Rounds between numbered checkpoints.
    pub checkpoint_every: usize,
    /// Multiplier on environment rewards before they become learning
    /// targets. Keeps value and reward heads near unit scale.
    pub reward_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_pi: 0.5,
            lambda_v: 0.5,
            clip: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            unroll: 5,
            workers: 5,
            lr: 3e-4,
            epochs: 2,
            minibatch: 250,
            episodes: 500,
            max_grad_norm: 5.0,
            shared_params: true,
            entropy_coef: 0.0,
            behavior: Behavior::Mcts,
            normalize_advantages: true,
            checkpoint_every: 10,
            reward_scale: 0.01,
        }
    }
}

impl TrainConfig {
    // Negated comparisons so that NaN fails validation.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), String> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if self.lambda_pi < 0.0 || self.lambda_v < 0.0 {
            return Err("loss weights must be non-negative".into());
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(format!("clip {} not in (0, 1)", self.clip));
        }
        if !unit(self.gamma) || !unit(self.gae_lambda) {
            return Err("gamma and gae_lambda must lie in (0, 1]".into());
        }
        if self.workers == 0
            || self.epochs == 0
            || self.minibatch == 0
            || self.checkpoint_every == 0
        {
            return Err("workers, epochs, minibatch and checkpoint_every must be positive".into());
        }
        if !(self.reward_scale > 0.0) {
            return Err("reward_scale must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.max_grad_norm > 0.0) || self.entropy_coef < 0.0 {
            return Err("lr and max_grad_norm must be positive, entropy_coef non-negative".into());
        }
        Ok(())
    }
}

/// Advantages and value targets aligned with one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub advantages: Vec<f64>,
    pub values: Vec<f64>,
}

/// GAE targets for each trajectory on scaled rewards, optionally standardising the
/// advantages across all of them. Episodes end at the horizon, so the
/// bootstrap value is zero.
pub fn prepare_targets(trajs: &[Trajectory], cfg: &TrainConfig) -> Vec<Targets> {
    let mut out: Vec<Targets> = trajs
        .iter()
        .map(|t| {
            let rewards: Vec<f64> = t.rewards().iter().map(|r| r * cfg.reward_scale).collect();
            let (advantages, values) =
                compute_advantages(&rewards, &t.values(), 0.0, cfg.gamma, cfg.gae_lambda);
            Targets { advantages, values }
        })
        .collect();
    if cfg.normalize_advantages {
        let all: Vec<f64> = out
            .iter()
            .flat_map(|t| t.advantages.iter().copied())
            .collect();
        if all.len() > 1 {
            let mean = all.iter().sum::<f64>() / all.len() as f64;
            let var = all.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / all.len() as f64;
            let sd = var.sqrt().max(1e-8);
            for t in &mut out {
                for a in &mut t.advantages {
                    *a = (*a - mean) / sd;
                }
            }
        }
    }
    out
}

/// Differentiable loss of one minibatch plus its component values.
pub struct BatchLoss {
    pub total: Var,
    pub parts: LossParts,
    /// Mean of `logp_old − logp` over the batch.
    pub approx_kl: f64,
    /// `π_θ(a|o) / π_old(a|o)` per sample.
    pub ratios: Vec<f64>,
}

/// Builds the joint loss for the samples `index` (pairs of trajectory and
/// step) on `tape`.
pub fn batch_loss(
    tape: &mut Tape<'_>,
    policy: &Policy,
    trajs: &[Trajectory],
    targets: &[Targets],
    index: &[(usize, usize)],
    cfg: &TrainConfig,
) -> Result<BatchLoss, TrainError> {
    let mut ppo_terms = Vec::with_capacity(index.len());
    let mut distill_terms = Vec::new();
    let mut value_terms = Vec::with_capacity(index.len());
    let mut entropy_terms = Vec::new();
    let mut approx_kl = 0.0;
    let mut ratios = Vec::with_capacity(index.len());
    for &(ti, t) in index {
        let traj = &trajs[ti];
        let tg = &targets[ti];
        let s = &traj.steps[t];
        let net = policy.net(traj.agent);
        let root = net.forward_root(tape, &s.graph, &s.catalog)?;
        let probs = tape.softmax(root.logits, Some(&s.catalog.mask))?;
        let pa = tape.gather(probs, &[s.action])?;
        let pa = tape.sum(pa);
        let logp = tape.log(pa);
        let lp = tape.item(logp);
        approx_kl += s.logp_old - lp;
        ratios.push((lp - s.logp_old).exp());
        ppo_terms.push(ppo_surrogate(
            tape,
            logp,
            s.logp_old,
            tg.advantages[t],
            cfg.clip,
        )?);
        if cfg.lambda_pi > 0.0 {
            if let Some(pi) = &s.search_policy {
                distill_terms.push(distill_kl(tape, probs, pi, &s.catalog.mask)?);
            }
        }
        if cfg.entropy_coef > 0.0 {
            entropy_terms.push(entropy(tape, probs)?);
        }
        let k = cfg.unroll.min(traj.steps.len() - 1 - t);
        let mut actions = Vec::with_capacity(k);
        if k > 0 {
            actions.push(LatentNet::action_row(tape, root.actions, s.action)?);
            for later in &traj.steps[t + 1..t + k] {
                actions.push(embed_row(tape, net, &later.action_features)?);
            }
        }
        let rewards: Vec<f64> = traj.steps[t..t + k]
            .iter()
            .map(|x| x.reward * cfg.reward_scale)
            .collect();
        value_terms.push(model_loss(
            tape,
            net,
            root.latent,
            &actions,
            &rewards,
            &tg.values[t..=t + k],
        )?);
    }
    let n = index.len() as f64;
    let ppo_sum = loss::sum_scalars(tape, &ppo_terms)?;
    let ppo = tape.scale(ppo_sum, -1.0 / n);
    let value = loss::mean_scalars(tape, &value_terms)?;
    let mut parts = LossParts {
        ppo: tape.item(ppo),
        value: tape.item(value),
        ..Default::default()
    };
    let weighted_v = tape.scale(value, cfg.lambda_v);
    let mut total = tape.add(ppo, weighted_v)?;
    if !distill_terms.is_empty() {
        let d = loss::mean_scalars(tape, &distill_terms)?;
        parts.distill = tape.item(d);
        let d = tape.scale(d, cfg.lambda_pi);
        total = tape.add(total, d)?;
    }
    if !entropy_terms.is_empty() {
        let h = loss::mean_scalars(tape, &entropy_terms)?;
        parts.entropy = tape.item(h);
        let h = tape.scale(h, -cfg.entropy_coef);
        total = tape.add(total, h)?;
    }
    Ok(BatchLoss {
        total,
        parts,
        approx_kl: approx_kl / n,
        ratios,
    })
}

fn embed_row(tape: &mut Tape<'_>, net: &LatentNet, features: &[f64]) -> Result<Var, TrainError> {
    let x = tape.constant(Tensor::new(&[1, ACTION_FEATS], features.to_vec())?);
    let e = net.embed_actions(tape, x)?;
    Ok(LatentNet::action_row(tape, e, 0)?)
}

/// One row of the metrics CSV, written after every collection round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    /// Episodes collected so far.
    pub episodes: usize,
    /// Mean team return of this round's episodes.
    pub mean_reward: f64,
    pub std_reward: f64,
    pub loss_total: f64,
    pub loss_ppo: f64,
    pub loss_distill: f64,
    pub loss_value: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub search_calls: u64,
}

pub struct TrainOutcome {
    pub policy: Policy,
    pub metrics: Vec<MetricsRow>,
    pub search_calls: u64,
    pub episodes: usize,
}

/// Collects one round of episodes in parallel, returned in worker order.
pub fn collect_rollouts(
    policy: &Policy,
    cfg: &RunConfig,
    seeds: &[u64],
    search_calls: &AtomicU64,
) -> Result<Vec<Episode>, TrainError> {
    let acting = Acting::train(cfg.train.behavior);
    seeds
        .par_iter()
        .enumerate()
        .map(|(worker, &seed)| {
            run_episode(
                policy,
                &cfg.sim,
                &cfg.search,
                acting,
                seed,
                true,
                search_calls,
            )
            .map_err(|e| TrainError::Worker {
                worker,
                source: Box::new(e),
            })
        })
        .collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Output files of a training run.
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub const METRICS: &'static str = "metrics.csv";
    pub const MODEL: &'static str = "model.acdz";

    pub fn new(dir: &Path) -> Result<Self, TrainError> {
        fs::create_dir_all(dir)?;
        Ok(RunFiles {
            dir: dir.to_path_buf(),
        })
    }

    pub fn numbered(&self, episodes: usize) -> PathBuf {
        self.dir.join(format!("ckpt-{episodes:06}.acdz"))
    }

    fn checkpoint(&self, policy: &Policy, episodes: usize) -> Result<(), TrainError> {
        policy.store.save(&self.numbered(episodes))?;
        policy.store.save(&self.dir.join(Self::MODEL))?;
        Ok(())
    }
}

/// Trains from a fresh initialisation for `cfg.train.episodes` episodes.
///
/// With `out`, writes `metrics.csv`, numbered checkpoints and `model.acdz`
/// (always the last good parameters).
pub fn train(cfg: &RunConfig, seed: u64, out: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    let tc = &cfg.train;
    let mut policy = Policy::new(cfg.net, tc.shared_params, NUM_AGENTS, seed)?;
    let files = out.map(RunFiles::new).transpose()?;
    let mut writer = match &files {
        Some(f) => Some(csv::Writer::from_path(f.dir.join(RunFiles::METRICS))?),
        None => None,
    };
    if let Some(f) = &files {
        let text = cfg
            .to_toml()
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        fs::write(f.dir.join("config.toml"), text)?;
        f.checkpoint(&policy, 0)?;
    }
    let adam = Adam::new(tc.lr);
    let search_calls = AtomicU64::new(0);
    let mut metrics = Vec::new();
    let mut episodes = 0;
    let mut round = 0;
    while episodes < tc.episodes {
        let n = tc.workers.min(tc.episodes - episodes);
        let seeds: Vec<u64> = (0..n)
            .map(|w| mix(&[seed, round as u64, w as u64, Purpose::Episode as u64]))
            .collect();
        let batch = collect_rollouts(&policy, cfg, &seeds, &search_calls)?;
        episodes += n;
        let returns: Vec<f64> = batch.iter().map(|e| e.replay.total_reward).collect();
        let trajs: Vec<Trajectory> = batch.into_iter().flat_map(|e| e.trajectories).collect();
        let targets = prepare_targets(&trajs, tc);
        let mut index: Vec<(usize, usize)> = trajs
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..t.steps.len()).map(move |s| (i, s)))
            .collect();

        let mut rng = stream(seed, round as u64, 0, Purpose::Shuffle);
        let mut acc = LossParts::default();
        let (mut total_acc, mut kl_acc, mut norm_acc, mut updates) = (0.0, 0.0, 0.0, 0usize);
        for _ in 0..tc.epochs {
            index.shuffle(&mut rng);
            for chunk in index.chunks(tc.minibatch) {
                policy.store.zero_grad();
                let (grads, loss) = {
                    let mut tape = Tape::new(&policy.store);
                    let loss = batch_loss(&mut tape, &policy, &trajs, &targets, chunk, tc)?;
                    let total = tape.item(loss.total);
                    (tape.backward(loss.total)?, (total, loss))
                };
                let (total, loss) = loss;
                policy.store.accumulate(&grads);
                let norm = policy.store.grad_norm();
                if !total.is_finite() || !norm.is_finite() {
                    return Err(TrainError::NonFinite { round });
                }
                policy.store.clip_grad_norm(tc.max_grad_norm);
                adam.step(&mut policy.store);
                if !policy.store.all_finite() {
                    return Err(TrainError::NonFinite { round });
                }
                total_acc += total;
                acc.ppo += loss.parts.ppo;
                acc.distill += loss.parts.distill;
                acc.value += loss.parts.value;
                acc.entropy += loss.parts.entropy;
                kl_acc += loss.approx_kl;
                norm_acc += norm;
                updates += 1;
            }
        }
        let u = updates.max(1) as f64;
        let (mean_reward, std_reward) = mean_std(&returns);
        let row = MetricsRow {
            round,
            episodes,
            mean_reward,
            std_reward,
            loss_total: total_acc / u,
            loss_ppo: acc.ppo / u,
            loss_distill: acc.distill / u,
            loss_value: acc.value / u,
            entropy: acc.entropy / u,
            approx_kl: kl_acc / u,
            grad_norm: norm_acc / u,
            search_calls: search_calls.load(Ordering::Relaxed),
        };
        log::info!(
            "round {round}: episodes {episodes}, reward {mean_reward:.3}, loss {:.4}",
            row.loss_total
        );
        if let Some(w) = writer.as_mut() {
            w.serialize(&row)?;
            w.flush()?;
        }
        metrics.push(row);
        round += 1;
        if let Some(f) = &files {
            if round % tc.checkpoint_every == 0 || episodes == tc.episodes {
                f.checkpoint(&policy, episodes)?;
            }
        }
    }
    Ok(TrainOutcome {
        policy,
        metrics,
        search_calls: search_calls.load(Ordering::Relaxed),
        episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;
    use crate::sim::SimConfig;

    fn tiny_config() -> RunConfig {
        RunConfig {
            sim: SimConfig {
                horizon: 8,
                ..SimConfig::desk()
            },
            net: NetConfig {
                hidden: 8,
                latent: 6,
                action_embed: 4,
            },
            train: TrainConfig {
                workers: 2,
                episodes: 4,
                minibatch: 16,
                epochs: 1,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn first_pass_ratios_are_exactly_one() {
        let cfg = tiny_config();
        let policy = Policy::new(cfg.net, true, NUM_AGENTS, 2).unwrap();
        let calls = AtomicU64::new(0);
        let eps = collect_rollouts(&policy, &cfg, &[5, 6], &calls).unwrap();
        let trajs: Vec<Trajectory> = eps.into_iter().flat_map(|e| e.trajectories).collect();
        let targets = prepare_targets(&trajs, &cfg.train);
        let index: Vec<_> = (0..trajs.len())
            .flat_map(|i| (0..8).map(move |t| (i, t)))
            .collect();
        let mut tape = Tape::new(&policy.store);
        let loss = batch_loss(&mut tape, &policy, &trajs, &targets, &index, &cfg.train).unwrap();
        assert!(loss.ratios.iter().all(|r| *r == 1.0));
        assert_eq!(loss.approx_kl, 0.0);
    }

    #[test]
    fn total_is_weighted_sum_of_parts() {
        let cfg = tiny_config();
        let policy = Policy::new(cfg.net, true, NUM_AGENTS, 2).unwrap();
        let calls = AtomicU64::new(0);
        let eps = collect_rollouts(&policy, &cfg, &[1], &calls).unwrap();
        let targets = prepare_targets(&eps[0].trajectories, &cfg.train);
        let index: Vec<_> = (0..5).map(|i| (i, 3)).collect();
        let mut tape = Tape::new(&policy.store);
        let loss = batch_loss(
            &mut tape,
            &policy,
            &eps[0].trajectories,
            &targets,
            &index,
            &cfg.train,
        )
        .unwrap();
        let expect = total_loss_scalar(&loss.parts, 0.5, 0.5, 0.0);
        assert!((tape.item(loss.total) - expect).abs() <= 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn training_is_deterministic_and_counts_searches() {
        let cfg = tiny_config();
        let a = train(&cfg, 9, None).unwrap();
        let b = train(&cfg, 9, None).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.policy.store.to_bytes(), b.policy.store.to_bytes());
        assert_eq!(a.search_calls, 4 * 5 * 8);
        assert_eq!(a.metrics.len(), 2);
    }

    #[test]
    fn actor_behaviour_never_searches() {
        let mut cfg = tiny_config();
        cfg.train.behavior = Behavior::Actor;
        let out = train(&cfg, 9, None).unwrap();
        assert_eq!(out.search_calls, 0);
        assert!(out.metrics.iter().all(|m| m.loss_distill == 0.0));
    }

    #[test]
    fn zero_budget_writes_initial_checkpoint_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.train.episodes = 0;
        let out = train(&cfg, 1, Some(dir.path())).unwrap();
        assert!(out.metrics.is_empty());
        let mut names: Vec<String> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.ends_with(".acdz"))
            .collect();
        names.sort();
        assert_eq!(names, vec!["ckpt-000000.acdz", "model.acdz"]);
    }

    #[test]
    fn config_rejects_bad_values() {
        let bad = TrainConfig {
            clip: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            gamma: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
