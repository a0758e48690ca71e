//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use acdzero::graph::{build_graph, enumerate_actions, ActionCatalog, AgentMemory, AttributedGraph};
use acdzero::mcts::{Model, SearchError};
use acdzero::sim::{BlueAction, CyberEnv, SimConfig};
use acdzero::tensor::softmax;
use rand::seq::SliceRandom;
use rand::Rng;

/// Graph and catalog of one agent after `steps` idle steps of episode `seed`.
pub fn sample_graph(seed: u64, steps: usize, agent: usize) -> (AttributedGraph, ActionCatalog) {
    let sim = SimConfig {
        horizon: steps + 1,
        ..SimConfig::desk()
    };
    let mut env = CyberEnv::new(sim, seed).expect("valid config");
    let mut memory = AgentMemory::new(agent);
    let mut obs = env.observe_all();
    for _ in 0..steps {
        memory.observe(&obs[agent]);
        let idle: Vec<BlueAction> = (0..env.num_agents()).map(BlueAction::sleep).collect();
        obs = env.step(&idle).expect("step").observations;
    }
    memory.observe(&obs[agent]);
    let graph = build_graph(&obs[agent], &memory).expect("graph");
    let catalog = enumerate_actions(&graph, &obs[agent]);
    (graph, catalog)
}

/// Relabels nodes within each kind and reorders hosts, subnets, ports,
/// files and edges. The result describes the same network.
pub fn permute_graph<R: Rng>(g: &AttributedGraph, rng: &mut R) -> AttributedGraph {
    let mut by_kind: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, n) in g.nodes.iter().enumerate() {
        by_kind.entry(n.kind as u8).or_default().push(i);
    }
    let mut node_map = vec![0; g.nodes.len()];
    for slots in by_kind.values() {
        let mut targets = slots.clone();
        targets.shuffle(rng);
        for (&old, &new) in slots.iter().zip(&targets) {
            node_map[old] = new;
        }
    }
    let mut nodes = g.nodes.clone();
    for (old, n) in g.nodes.iter().enumerate() {
        nodes[node_map[old]] = n.clone();
    }
    let mut edges: Vec<_> = g
        .edges
        .iter()
        .map(|e| {
            let mut e = *e;
            e.src = node_map[e.src];
            e.dst = node_map[e.dst];
            e
        })
        .collect();
    edges.shuffle(rng);

    let mut host_order: Vec<usize> = (0..g.hosts.len()).collect();
    host_order.shuffle(rng);
    let mut host_pos = vec![0; g.hosts.len()];
    for (new, &old) in host_order.iter().enumerate() {
        host_pos[old] = new;
    }
    let hosts = host_order
        .iter()
        .map(|&old| {
            let mut h = g.hosts[old].clone();
            h.node = node_map[h.node];
            h.ports = h.ports.iter().map(|&p| node_map[p]).collect();
            h.ports.shuffle(rng);
            h.files = h.files.iter().map(|&f| node_map[f]).collect();
            h.files.shuffle(rng);
            h
        })
        .collect();
    let mut subnets: Vec<_> = g
        .subnets
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.node = node_map[s.node];
            s.hosts = s.hosts.iter().map(|&h| host_pos[h]).collect();
            s.hosts.shuffle(rng);
            s
        })
        .collect();
    subnets.shuffle(rng);
    AttributedGraph {
        agent: g.agent,
        nodes,
        edges,
        global: g.global.clone(),
        hosts,
        subnets,
    }
}

/// Two-step MDP: a root choice, then a terminal choice; rewards given per
/// edge. The model is exact: uniform priors and optimal values.
#[derive(Clone, Debug)]
pub struct ToyMdp {
    pub r1: Vec<f64>,
    pub r2: Vec<Vec<f64>>,
    pub gamma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyState {
    Root,
    Mid(usize),
    End,
}

impl ToyMdp {
    pub fn random<R: Rng>(actions: usize, gamma: f64, rng: &mut R) -> Self {
        ToyMdp {
            r1: (0..actions).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            r2: (0..actions)
                .map(|_| (0..actions).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
            gamma,
        }
    }

    /// Draws instances until the best root action beats the runner-up by
    /// at least `gap`.
    pub fn with_gap<R: Rng>(actions: usize, gamma: f64, gap: f64, rng: &mut R) -> Self {
        loop {
            let m = Self::random(actions, gamma, rng);
            let mut q = m.q_values();
            q.sort_by(|a, b| b.total_cmp(a));
            if q[0] - q[1] >= gap {
                return m;
            }
        }
    }

    pub fn actions(&self) -> usize {
        self.r1.len()
    }

    /// Optimal action values at the root, by enumeration.
    pub fn q_values(&self) -> Vec<f64> {
        (0..self.actions())
            .map(|a| self.r1[a] + self.gamma * self.r2[a].iter().copied().fold(f64::MIN, f64::max))
            .collect()
    }

    pub fn optimal_action(&self) -> usize {
        let q = self.q_values();
        (0..q.len()).max_by(|&a, &b| q[a].total_cmp(&q[b])).unwrap()
    }

    pub fn value(&self, s: ToyState) -> f64 {
        match s {
            ToyState::Root => self.q_values().into_iter().fold(f64::MIN, f64::max),
            ToyState::Mid(a) => self.r2[a].iter().copied().fold(f64::MIN, f64::max),
            ToyState::End => 0.0,
        }
    }

    /// Value of following the uniform prior at both steps.
    pub fn prior_policy_value(&self) -> f64 {
        let n = self.actions() as f64;
        (0..self.actions())
            .map(|a| self.r1[a] + self.gamma * self.r2[a].iter().sum::<f64>() / n)
            .sum::<f64>()
            / n
    }
}

impl Model for ToyMdp {
    type State = ToyState;

    fn predict(&self, s: &ToyState, mask: &[bool]) -> Result<(Vec<f64>, f64), SearchError> {
        Ok((softmax(&vec![0.0; mask.len()], Some(mask))?, self.value(*s)))
    }

    fn dynamics(&self, s: &ToyState, a: usize) -> Result<(ToyState, f64), SearchError> {
        Ok(match *s {
            ToyState::Root => (ToyState::Mid(a), self.r1[a]),
            ToyState::Mid(x) => (ToyState::End, self.r2[x][a]),
            ToyState::End => (ToyState::End, 0.0),
        })
    }
}

/// Prints one verdict line straight to stderr so it survives output
/// capture.
pub fn report(criterion: usize, name: &str, pass: bool, detail: &str) {
    use std::io::Write;
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "criterion {criterion:>2} {verdict} {name}: {detail}"
    );
}

/// An informational line for a criterion, without a verdict.
pub fn note(criterion: usize, detail: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stderr(), "criterion {criterion:>2}      {detail}");
}
