//! Security metrics recomputed from episode logs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::sim::replay::Replay;
use crate::sim::{Compromise, RedActionKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub reward: f64,
    /// Clean host-steps over all host-steps.
    pub clean_host_ratio: f64,
    /// Host-steps without root access over all host-steps.
    pub non_escalated_ratio: f64,
    /// Restores on compromised hosts over all restores; absent without
    /// restores.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovery_precision: Option<f64>,
    /// Mean steps from compromise to restore; absent without recoveries.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_ttr: Option<f64>,
    pub impact_count: usize,
    /// `100 × (wasted restores + unrecovered incidents) / (incidents + wasted restores)`.
    pub recovery_error_pct: f64,
}

/// Derives [`EpisodeMetrics`] from a complete episode log.
pub fn compute_metrics(replay: &Replay) -> Result<EpisodeMetrics, EvalError> {
    let hosts = replay.header.num_hosts;
    if replay.steps.is_empty() || hosts == 0 {
        return Err(EvalError::Replay(
            "episode log has no steps or no hosts".into(),
        ));
    }
    let mut clean = 0usize;
    let mut non_root = 0usize;
    let mut open: BTreeMap<usize, usize> = BTreeMap::new();
    let (mut incidents, mut wasted, mut true_pos) = (0usize, 0usize, 0usize);
    let mut ttrs = Vec::new();
    let mut impacts = 0;
    for s in &replay.steps {
        if s.compromise.len() != hosts {
            return Err(EvalError::Replay(format!(
                "step {} lists {} hosts",
                s.step,
                s.compromise.len()
            )));
        }
        // Restores act before the attacker within a step.
        for r in &s.restores {
            if r.was_compromised {
                true_pos += 1;
                if let Some(start) = open.remove(&r.host) {
                    ttrs.push((s.step - start) as f64);
                }
            } else {
                wasted += 1;
            }
        }
        for &h in &s.new_compromises {
            incidents += 1;
            open.insert(h, s.step);
        }
        impacts += s
            .red_events
            .iter()
            .filter(|e| e.kind == RedActionKind::Impact && e.success)
            .count();
        clean += s
            .compromise
            .iter()
            .filter(|c| **c == Compromise::Clean)
            .count();
        non_root += s
            .compromise
            .iter()
            .filter(|c| **c != Compromise::RootAccess)
            .count();
    }
    let host_steps = (hosts * replay.steps.len()) as f64;
    let restores = true_pos + wasted;
    let denom = incidents + wasted;
    Ok(EpisodeMetrics {
        reward: replay.total_reward,
        clean_host_ratio: clean as f64 / host_steps,
        non_escalated_ratio: non_root as f64 / host_steps,
        recovery_precision: (restores > 0).then(|| true_pos as f64 / restores as f64),
        mean_ttr: (!ttrs.is_empty()).then(|| ttrs.iter().sum::<f64>() / ttrs.len() as f64),
        impact_count: impacts,
        recovery_error_pct: if denom == 0 {
            0.0
        } else {
            100.0 * (wasted + open.len()) as f64 / denom as f64
        },
    })
}

/// Mean and population standard deviation of one metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    /// Episodes where the metric was defined.
    pub n: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Option<Stat> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Stat {
            mean,
            std: var.sqrt(),
            n: xs.len(),
        })
    }
}

/// Per-metric statistics over a set of episodes; undefined metrics are
/// left out.
pub fn summarize(episodes: &[EpisodeMetrics]) -> BTreeMap<String, Stat> {
    let mut out = BTreeMap::new();
    let mut put = |name: &str, xs: Vec<f64>| {
        if let Some(s) = Stat::of(&xs) {
            out.insert(name.to_string(), s);
        }
    };
    put("reward", episodes.iter().map(|m| m.reward).collect());
    put(
        "clean_host_ratio",
        episodes.iter().map(|m| m.clean_host_ratio).collect(),
    );
    put(
        "non_escalated_ratio",
        episodes.iter().map(|m| m.non_escalated_ratio).collect(),
    );
    put(
        "recovery_precision",
        episodes
            .iter()
            .filter_map(|m| m.recovery_precision)
            .collect(),
    );
    put(
        "mean_ttr",
        episodes.iter().filter_map(|m| m.mean_ttr).collect(),
    );
    put(
        "impact_count",
        episodes.iter().map(|m| m.impact_count as f64).collect(),
    );
    put(
        "recovery_error_pct",
        episodes.iter().map(|m| m.recovery_error_pct).collect(),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::replay::{ReplayHeader, StepRecord, REPLAY_SCHEMA};
    use crate::sim::{RestoreRecord, RewardLedger, RewardTable};

    fn blank(hosts: usize, steps: usize) -> Replay {
        let header = ReplayHeader {
            schema_version: REPLAY_SCHEMA,
            seed: 0,
            horizon: steps,
            num_hosts: hosts,
            num_agents: 5,
            host_owner: vec![0; hosts],
            rewards: RewardTable::default(),
        };
        let mut r = Replay::new(header);
        for step in 0..steps {
            r.steps.push(StepRecord {
                step,
                actions: vec![],
                rejected: vec![],
                reward: 0.0,
                agent_rewards: vec![],
                ledger: RewardLedger::default(),
                red_events: vec![],
                restores: vec![],
                new_compromises: vec![],
                compromise: vec![Compromise::Clean; hosts],
                blocked_links: vec![],
            });
        }
        r
    }

    fn restore(host: usize, was_compromised: bool) -> RestoreRecord {
        RestoreRecord {
            agent: 0,
            host,
            was_compromised,
        }
    }

    #[test]
    fn quiet_episode() {
        let m = compute_metrics(&blank(4, 30)).unwrap();
        assert_eq!(m.clean_host_ratio, 1.0);
        assert_eq!(m.non_escalated_ratio, 1.0);
        assert_eq!(m.impact_count, 0);
        assert_eq!(m.recovery_precision, None);
        assert_eq!(m.mean_ttr, None);
        assert_eq!(m.recovery_error_pct, 0.0);
    }

    #[test]
    fn one_recovered_incident() {
        let mut r = blank(3, 40);
        r.steps[10].new_compromises.push(1);
        for s in 10..25 {
            r.steps[s].compromise[1] = Compromise::UserAccess;
        }
        r.steps[25].restores.push(restore(1, true));
        let m = compute_metrics(&r).unwrap();
        assert_eq!(m.recovery_precision, Some(1.0));
        assert_eq!(m.mean_ttr, Some(15.0));
        assert_eq!(m.recovery_error_pct, 0.0);
        assert_eq!(m.clean_host_ratio, 1.0 - 15.0 / 120.0);
        assert_eq!(m.non_escalated_ratio, 1.0);
    }

    #[test]
    fn wasted_restore_halves_precision() {
        let mut r = blank(3, 10);
        r.steps[2].new_compromises.push(0);
        r.steps[5].restores.push(restore(0, true));
        r.steps[6].restores.push(restore(2, false));
        let m = compute_metrics(&r).unwrap();
        assert_eq!(m.recovery_precision, Some(0.5));
        assert_eq!(m.recovery_error_pct, 50.0);
    }

    #[test]
    fn unrecovered_incident_counts_as_error() {
        let mut r = blank(2, 10);
        r.steps[3].new_compromises.push(0);
        for s in 3..10 {
            r.steps[s].compromise[0] = Compromise::RootAccess;
        }
        let m = compute_metrics(&r).unwrap();
        assert_eq!(m.recovery_error_pct, 100.0);
        assert!(m.non_escalated_ratio >= m.clean_host_ratio);
    }

    #[test]
    fn single_episode_has_zero_std() {
        let m = compute_metrics(&blank(2, 5)).unwrap();
        let s = summarize(&[m]);
        assert!(s.values().all(|v| v.std == 0.0));
        assert!(!s.contains_key("mean_ttr"));
    }
}
