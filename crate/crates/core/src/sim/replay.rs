//! Line-delimited JSON episode logs.
//!
//! A log is one `header` record, one `step` record per executed step and a
//! closing `end` record. Metrics are recomputed from these alone.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    BlueAction, Compromise, CyberEnv, HostId, RedEvent, RestoreRecord, RewardLedger, RewardTable,
    StepResult,
};

pub const REPLAY_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("replay io: {0}")]
    Io(#[from] std::io::Error),
    #[error("replay line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("replay is truncated: {0}")]
    Truncated(&'static str),
    #[error("replay line {line}: {msg}")]
    Order { line: usize, msg: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayHeader {
    pub schema_version: u32,
    pub seed: u64,
    pub horizon: usize,
    pub num_hosts: usize,
    pub num_agents: usize,
    pub host_owner: Vec<usize>,
    pub rewards: RewardTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub actions: Vec<BlueAction>,
    pub rejected: Vec<bool>,
    pub reward: f64,
    pub agent_rewards: Vec<f64>,
    pub ledger: RewardLedger,
    pub red_events: Vec<RedEvent>,
    pub restores: Vec<RestoreRecord>,
    pub new_compromises: Vec<HostId>,
    /// Per-host compromise at the end of the step.
    pub compromise: Vec<Compromise>,
    pub blocked_links: Vec<(usize, usize)>,
}

impl From<&StepResult> for StepRecord {
    fn from(r: &StepResult) -> Self {
        StepRecord {
            step: r.step,
            actions: r.actions.clone(),
            rejected: r.rejected.clone(),
            reward: r.reward,
            agent_rewards: r.agent_rewards.clone(),
            ledger: r.ledger,
            red_events: r.red_events.clone(),
            restores: r.restores.clone(),
            new_compromises: r.new_compromises.clone(),
            compromise: r.truth.compromise.clone(),
            blocked_links: r.truth.blocked_links.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum ReplayRecord {
    Header(ReplayHeader),
    Step(StepRecord),
    End { steps: usize, total_reward: f64 },
}

/// A fully parsed episode log.
#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    pub header: ReplayHeader,
    pub steps: Vec<StepRecord>,
    pub total_reward: f64,
}

impl ReplayHeader {
    pub fn for_env(env: &CyberEnv) -> Self {
        let topo = env.topology();
        ReplayHeader {
            schema_version: REPLAY_SCHEMA,
            seed: env.seed(),
            horizon: env.config().horizon,
            num_hosts: topo.hosts.len(),
            num_agents: env.num_agents(),
            host_owner: (0..topo.hosts.len())
                .map(|h| topo.owner_of_host(h))
                .collect(),
            rewards: env.config().rewards.clone(),
        }
    }
}

impl Replay {
    pub fn new(header: ReplayHeader) -> Self {
        Replay {
            header,
            steps: Vec::new(),
            total_reward: 0.0,
        }
    }

    pub fn push(&mut self, r: &StepResult) {
        self.total_reward += r.reward;
        self.steps.push(StepRecord::from(r));
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), ReplayError> {
        let mut line = |rec: &ReplayRecord| -> Result<(), ReplayError> {
            serde_json::to_writer(&mut w, rec)
                .map_err(|e| ReplayError::Json { line: 0, source: e })?;
            w.write_all(b"\n")?;
            Ok(())
        };
        line(&ReplayRecord::Header(self.header.clone()))?;
        for s in &self.steps {
            line(&ReplayRecord::Step(s.clone()))?;
        }
        line(&ReplayRecord::End {
            steps: self.steps.len(),
            total_reward: self.total_reward,
        })?;
        w.flush()?;
        Ok(())
    }

    /// Parses one or more concatenated episode logs.
    pub fn read_all<R: BufRead>(r: R) -> Result<Vec<Replay>, ReplayError> {
        let mut out = Vec::new();
        let mut current: Option<Replay> = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayRecord = serde_json::from_str(&line).map_err(|e| ReplayError::Json {
                line: i + 1,
                source: e,
            })?;
            let order = |msg: &str| ReplayError::Order {
                line: i + 1,
                msg: msg.to_string(),
            };
            match rec {
                ReplayRecord::Header(h) => {
                    if current.is_some() {
                        return Err(order("header before previous episode ended"));
                    }
                    current = Some(Replay::new(h));
                }
                ReplayRecord::Step(s) => {
                    let rep = current
                        .as_mut()
                        .ok_or_else(|| order("step before header"))?;
                    if s.step != rep.steps.len() {
                        return Err(order("step index out of sequence"));
                    }
                    rep.steps.push(s);
                }
                ReplayRecord::End {
                    steps,
                    total_reward,
                } => {
                    let mut rep = current.take().ok_or_else(|| order("end before header"))?;
                    if steps != rep.steps.len() {
                        return Err(order("end record step count mismatch"));
                    }
                    rep.total_reward = total_reward;
                    out.push(rep);
                }
            }
        }
        if current.is_some() {
            return Err(ReplayError::Truncated("missing end record"));
        }
        Ok(out)
    }

    pub fn read_one<R: BufRead>(r: R) -> Result<Replay, ReplayError> {
        let mut all = Self::read_all(r)?;
        match all.len() {
            1 => Ok(all.pop().unwrap()),
            0 => Err(ReplayError::Truncated("no episode in log")),
            _ => Err(ReplayError::Order {
                line: 0,
                msg: "expected a single episode".into(),
            }),
        }
    }
}

/// The episode as JSON lines, exactly as [`Replay::write_to`] emits it.
impl fmt::Display for Replay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|_| fmt::Error)?;
        f.write_str(&String::from_utf8_lossy(&buf))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{BlueAction, SimConfig};

    fn episode(seed: u64) -> Replay {
        let c = SimConfig {
            horizon: 15,
            ..Default::default()
        };
        let mut env = CyberEnv::new(c, seed).unwrap();
        let mut rep = Replay::new(ReplayHeader::for_env(&env));
        let acts: Vec<_> = (0..5).map(BlueAction::sleep).collect();
        while !env.is_done() {
            rep.push(&env.step(&acts).unwrap());
        }
        rep
    }

    #[test]
    fn roundtrip() {
        let rep = episode(3);
        let text = rep.to_string();
        let back = Replay::read_one(text.as_bytes()).unwrap();
        assert_eq!(back, rep);
        assert_eq!(back.to_string(), text);
    }

    #[test]
    fn truncated_log_is_error() {
        let text = episode(3).to_string();
        let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            Replay::read_one(cut.as_bytes()),
            Err(ReplayError::Truncated(_))
        ));
    }

    #[test]
    fn ledger_matches_step_rewards() {
        let rep = episode(9);
        let sum: f64 = rep
            .steps
            .iter()
            .map(|s| s.ledger.total(&rep.header.rewards))
            .sum();
        let direct: f64 = rep.steps.iter().map(|s| s.reward).sum();
        assert_eq!(sum, direct);
        assert_eq!(direct, rep.total_reward);
    }
}
