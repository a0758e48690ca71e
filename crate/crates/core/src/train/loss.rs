//! Advantage estimation and the loss terms of the joint objective.
//!
//! Tape versions build differentiable graphs; the `*_scalar` twins compute
//! the same quantities on plain numbers and serve as oracles.

use crate::net::LatentNet;
use crate::tensor::{Result, Tape, TensorError, Var};

/// Floor applied to actor probabilities inside the distillation log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Generalised advantage estimation over one trajectory.
///
/// `values[t]` is the critic's estimate at step `t`; `bootstrap` values the
/// state after the last step. Returns `(advantages, value_targets)` with
/// `target = advantage + value`.
pub fn compute_advantages(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len(), "one value per reward");
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, targets)
}

/// `min(r·Â, clip(r, 1−ε, 1+ε)·Â)` for one sample.
pub fn ppo_surrogate_scalar(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Per-sample clipped surrogate on the tape, with `r = exp(logp − logp_old)`.
pub fn ppo_surrogate(
    tape: &mut Tape<'_>,
    logp: Var,
    logp_old: f64,
    advantage: f64,
    clip: f64,
) -> Result<Var> {
    let shifted = tape.add_scalar(logp, -logp_old);
    let ratio = tape.exp(shifted);
    let unclipped = tape.scale(ratio, advantage);
    let clipped = tape.clamp(ratio, 1.0 - clip, 1.0 + clip)?;
    let clipped = tape.scale(clipped, advantage);
    tape.minimum(unclipped, clipped)
}

/// Negated mean surrogate over a batch, ready for minimisation.
pub fn ppo_loss(
    tape: &mut Tape<'_>,
    logps: &[Var],
    logp_old: &[f64],
    advantages: &[f64],
    clip: f64,
) -> Result<Var> {
    if logps.is_empty() || logps.len() != logp_old.len() || logps.len() != advantages.len() {
        return Err(TensorError::Contract(
            "ppo batch sizes differ or are empty".into(),
        ));
    }
    let terms = logps
        .iter()
        .zip(logp_old)
        .zip(advantages)
        .map(|((&lp, &old), &a)| ppo_surrogate(tape, lp, old, a, clip))
        .collect::<Result<Vec<_>>>()?;
    let s = sum_scalars(tape, &terms)?;
    Ok(tape.scale(s, -1.0 / terms.len() as f64))
}

fn check_support(target: &[f64], mask: &[bool]) -> Result<()> {
    if target.len() != mask.len() {
        return Err(TensorError::Contract(format!(
            "search policy has {} entries, mask {}",
            target.len(),
            mask.len()
        )));
    }
    if let Some(i) = (0..mask.len()).find(|&i| !mask[i] && target[i] != 0.0) {
        return Err(TensorError::Contract(format!(
            "search policy puts mass on masked action {i}"
        )));
    }
    Ok(())
}

/// `KL(target ‖ probs)` over legal actions with the actor floored at
/// [`PROB_FLOOR`].
pub fn kl_scalar(target: &[f64], probs: &[f64], mask: &[bool]) -> Result<f64> {
    check_support(target, mask)?;
    Ok((0..mask.len())
        .filter(|&i| mask[i] && target[i] > 0.0)
        .map(|i| target[i] * (target[i].ln() - probs[i].max(PROB_FLOOR).ln()))
        .sum())
}

/// Differentiable `KL(target ‖ probs)` for one sample; `probs` is the
/// actor's masked softmax.
pub fn distill_kl(tape: &mut Tape<'_>, probs: Var, target: &[f64], mask: &[bool]) -> Result<Var> {
    check_support(target, mask)?;
    let entropy_term: f64 = target
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum();
    let floored = tape.clamp_min(probs, PROB_FLOOR);
    let logq = tape.log(floored);
    let t = tape.constant(crate::tensor::Tensor::vector(target.to_vec()));
    let cross = tape.mul(t, logq)?;
    let cross = tape.sum(cross);
    let neg = tape.neg(cross);
    Ok(tape.add_scalar(neg, entropy_term))
}

/// Entropy of the actor's masked distribution.
pub fn entropy(tape: &mut Tape<'_>, probs: Var) -> Result<Var> {
    let floored = tape.clamp_min(probs, PROB_FLOOR);
    let logp = tape.log(floored);
    let plogp = tape.mul(probs, logp)?;
    let s = tape.sum(plogp);
    Ok(tape.neg(s))
}

/// Unrolled model loss from `latent` along `actions` (embedded action
/// vectors for steps `t..t+K`):
///
/// ```text
/// mean_k (r̂_k − r_{t+k})²  +  mean_k (v_k − z_{t+k})²
/// ```
///
/// with `K = actions.len()`, `rewards.len() == K` and `targets.len() == K+1`.
/// Only rewards and value targets supervise the unroll.
pub fn model_loss(
    tape: &mut Tape<'_>,
    net: &LatentNet,
    latent: Var,
    actions: &[Var],
    rewards: &[f64],
    targets: &[f64],
) -> Result<Var> {
    let k = actions.len();
    if rewards.len() != k || targets.len() != k + 1 {
        return Err(TensorError::Contract(format!(
            "unroll of {k} needs {k} rewards and {} targets, got {} and {}",
            k + 1,
            rewards.len(),
            targets.len()
        )));
    }
    let mut state = latent;
    let mut reward_terms = Vec::with_capacity(k);
    let mut value_terms = Vec::with_capacity(k + 1);
    for (i, &a) in actions.iter().enumerate() {
        let v = net.value(tape, state)?;
        value_terms.push(squared_error(tape, v, targets[i]));
        let (next, r) = net.dynamics(tape, state, a)?;
        reward_terms.push(squared_error(tape, r, rewards[i]));
        state = next;
    }
    let v = net.value(tape, state)?;
    value_terms.push(squared_error(tape, v, targets[k]));
    let v = mean_scalars(tape, &value_terms)?;
    if reward_terms.is_empty() {
        return Ok(v);
    }
    let r = mean_scalars(tape, &reward_terms)?;
    tape.add(r, v)
}

fn squared_error(tape: &mut Tape<'_>, x: Var, target: f64) -> Var {
    let d = tape.add_scalar(x, -target);
    let d2 = tape.mul(d, d).expect("same shape");
    tape.sum(d2)
}

pub(crate) fn sum_scalars(tape: &mut Tape<'_>, xs: &[Var]) -> Result<Var> {
    let (first, rest) = xs
        .split_first()
        .ok_or_else(|| TensorError::Contract("sum of no terms".into()))?;
    let mut acc = *first;
    for &x in rest {
        acc = tape.add(acc, x)?;
    }
    Ok(acc)
}

pub(crate) fn mean_scalars(tape: &mut Tape<'_>, xs: &[Var]) -> Result<Var> {
    let s = sum_scalars(tape, xs)?;
    Ok(tape.scale(s, 1.0 / xs.len() as f64))
}

/// Loss components of one minibatch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub ppo: f64,
    pub distill: f64,
    pub value: f64,
    pub entropy: f64,
}

/// `ppo + λ_π·distill + λ_v·value − c_H·entropy`.
pub fn total_loss_scalar(
    parts: &LossParts,
    lambda_pi: f64,
    lambda_v: f64,
    entropy_coef: f64,
) -> f64 {
    parts.ppo + lambda_pi * parts.distill + lambda_v * parts.value - entropy_coef * parts.entropy
}
