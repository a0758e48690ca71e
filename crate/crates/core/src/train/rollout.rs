//! Episode execution for all five defenders, shared by training and
//! evaluation.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::graph::{
    action_features, action_to_command, build_graph, encode_outgoing_message, enumerate_actions,
    ActionCatalog, AgentMemory, AttributedGraph, MessageSummary, ACTION_FEATS,
};
use crate::mcts::{run_search, LatentModel, SearchConfig, SearchMode};
use crate::net::Policy;
use crate::sim::replay::{Replay, ReplayHeader};
use crate::sim::rng::{stream, Purpose};
use crate::sim::{AgentId, CyberEnv, Message, SimConfig};

/// Where behaviour actions come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    /// Sample from the search's visit policy.
    Mcts,
    /// Sample from the actor directly; no search is run.
    Actor,
}

/// How actions are chosen while running an episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Acting {
    pub behavior: Behavior,
    /// Search mode when `behavior` is `Mcts`; fixes noise and temperature.
    pub mode: SearchMode,
}

impl Acting {
    pub fn train(behavior: Behavior) -> Self {
        Acting {
            behavior,
            mode: SearchMode::Train,
        }
    }

    pub fn eval(with_search: bool) -> Self {
        Acting {
            behavior: if with_search {
                Behavior::Mcts
            } else {
                Behavior::Actor
            },
            mode: SearchMode::Eval,
        }
    }
}

/// One decision of one agent.
#[derive(Clone, Debug)]
pub struct StepSample {
    pub graph: AttributedGraph,
    pub catalog: ActionCatalog,
    pub action: usize,
    /// Feature row of the chosen action; the unrolled model loss embeds it
    /// without looking at the step's observation.
    pub action_features: Vec<f64>,
    pub reward: f64,
    /// Visit policy at the root, when a search ran.
    pub search_policy: Option<Vec<f64>>,
    /// Search root value, or the critic's value without search.
    pub root_value: f64,
    /// Critic value `v_θ(o_t)` under the behaviour snapshot.
    pub value: f64,
    /// `log π_θ(a_t | o_t)` under the behaviour snapshot.
    pub logp_old: f64,
}

/// One agent's steps through one episode.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub seed: u64,
    pub agent: AgentId,
    pub steps: Vec<StepSample>,
}

impl Trajectory {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.value).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Episode {
    /// Per agent, in agent order; empty unless recording was requested.
    pub trajectories: Vec<Trajectory>,
    pub replay: Replay,
}

fn sample<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    WeightedIndex::new(probs)
        .expect("a distribution over legal actions")
        .sample(rng)
}

/// Runs one episode with every agent acting on `policy`.
///
/// All randomness is keyed by `(seed, step, agent)`, so an episode is a pure
/// function of its inputs. `search_calls` counts every search invocation.
pub fn run_episode(
    policy: &Policy,
    sim: &SimConfig,
    search: &SearchConfig,
    acting: Acting,
    seed: u64,
    record: bool,
    search_calls: &AtomicU64,
) -> Result<Episode, TrainError> {
    let mut env = CyberEnv::new(sim.clone(), seed)?;
    let agents = env.num_agents();
    let mut replay = Replay::new(ReplayHeader::for_env(&env));
    let mut memories: Vec<AgentMemory> = (0..agents).map(AgentMemory::new).collect();
    let mut trajectories: Vec<Trajectory> = (0..agents)
        .map(|agent| Trajectory {
            seed,
            agent,
            steps: Vec::new(),
        })
        .collect();
    let mut observations = env.observe_all();

    while !env.is_done() {
        let t = env.timestep();
        let mut actions = Vec::with_capacity(agents);
        let mut outbox = Vec::with_capacity(agents);
        for agent in 0..agents {
            let obs = &observations[agent];
            let memory = &mut memories[agent];
            memory.observe(obs);
            let graph = build_graph(obs, memory)?;
            let catalog = enumerate_actions(&graph, obs);
            let net = policy.net(agent);
            let (model, root) = LatentModel::new(net, &policy.store, &graph, &catalog)?;
            let mut rng = stream(seed, t as u64, agent as u64, Purpose::Action);
            let (action, search_policy, root_value) = match acting.behavior {
                Behavior::Mcts => {
                    search_calls.fetch_add(1, Ordering::Relaxed);
                    let mut search_rng = stream(seed, t as u64, agent as u64, Purpose::Search);
                    let result = run_search(
                        &model,
                        root.latent.clone(),
                        &catalog.mask,
                        search,
                        acting.mode,
                        &mut search_rng,
                    )?;
                    let a = sample(&result.policy, &mut rng);
                    (a, Some(result.policy), result.root_value)
                }
                Behavior::Actor => (sample(&root.prior, &mut rng), None, root.value),
            };
            let command = action_to_command(action, &catalog)?;
            let summary = MessageSummary::from_observation(obs, memory, &command.kind);
            outbox.push(Message(encode_outgoing_message(&summary)));
            memory.record_action(&command.kind, t);
            actions.push(command);
            if record {
                let feats = action_features(&graph, &catalog);
                let row = feats.data()[action * ACTION_FEATS..(action + 1) * ACTION_FEATS].to_vec();
                trajectories[agent].steps.push(StepSample {
                    graph,
                    catalog,
                    action,
                    action_features: row,
                    reward: 0.0,
                    search_policy,
                    root_value,
                    value: root.value,
                    logp_old: root.prior[action].ln(),
                });
            }
        }
        env.set_outbox(&outbox);
        let result = env.step(&actions)?;
        if record {
            for (traj, r) in trajectories.iter_mut().zip(&result.agent_rewards) {
                traj.steps.last_mut().expect("pushed above").reward = *r;
            }
        }
        replay.push(&result);
        observations = result.observations;
    }
    if !record {
        trajectories.clear();
    }
    Ok(Episode {
        trajectories,
        replay,
    })
}
