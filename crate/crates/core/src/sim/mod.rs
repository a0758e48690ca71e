//! Seedable multi-subnet cyber-defense environment.
//!
//! Five defenders each own a disjoint set of subnets. A finite-state
//! attacker works its way through discover, scan, exploit, escalate and
//! impact; simulated users run local and remote tasks that suffer when hosts
//! are compromised or traffic is blocked. Defenders only see noisy alerts
//! for their own hosts, the traffic policy of their links, and one byte per
//! step from each other defender.

mod config;
mod env;
pub mod replay;
pub mod rng;
mod topology;

pub use config::{RewardTable, SimConfig};
pub use env::{
    deliver_messages, ActionKind, Activity, Alerts, BlueAction, Compromise, CyberEnv, HostState,
    LinkView, LocalObservation, Message, ObservedFile, ObservedHost, RedActionKind, RedEvent,
    RedPhase, RedState, RestoreRecord, RewardLedger, StepResult, TruthSnapshot,
};
pub use topology::{
    generate_topology, link_key, FileRecord, HostRole, HostSpec, Service, ServiceKind, Subnet,
    Topology, NUM_AGENTS, OS_TAGS, ZONES,
};

use thiserror::Error;

pub type HostId = usize;
pub type SubnetId = usize;
pub type AgentId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error("expected one action per agent ({expected}), got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("message value {0} is outside 0..=255")]
    MessageRange(i64),
    #[error("unknown agent {0}")]
    Agent(AgentId),
    #[error("episode already finished")]
    Done,
}
