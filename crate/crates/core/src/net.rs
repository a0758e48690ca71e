//! Latent world model over attributed graphs: representation, action
//! encoder, recurrent dynamics with a reward head, and policy/value heads.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{
    action_features, ActionCatalog, AttributedGraph, ACTION_FEATS, FILE_FEATS, GLOBAL_FEATS,
    HOST_FEATS, PORT_FEATS, SUBNET_FEATS,
};
use crate::sim::rng::{mix, Purpose};
use crate::sim::AgentId;
use crate::tensor::{
    gru_cell, matmul, CheckpointError, GruParams, Linear, ParamId, ParamStore, Result, Tape,
    Tensor, TensorError, Var,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub hidden: usize,
    pub latent: usize,
    pub action_embed: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: 256,
            latent: 128,
            action_embed: 32,
        }
    }
}

impl NetConfig {
    /// Narrow widths for single-core desk runs.
    pub fn desk() -> Self {
        NetConfig {
            hidden: 32,
            latent: 32,
            action_embed: 16,
        }
    }
}

/// Parameter handles of the model. The values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct LatentNet {
    pub config: NetConfig,
    port: Linear,
    file: Linear,
    null_port: ParamId,
    null_file: ParamId,
    null_host: ParamId,
    host: [Linear; 2],
    subnet: [Linear; 2],
    out: [Linear; 2],
    action: Linear,
    gru: GruParams,
    dyn_out: Linear,
    reward: [Linear; 2],
    value: [Linear; 2],
    policy_state: ParamId,
    policy_action: Linear,
    policy_out: ParamId,
}

/// Root-level forward values, all recorded on one tape.
#[derive(Clone, Copy, Debug)]
pub struct RootForward {
    pub latent: Var,
    /// `[n × action_embed]`
    pub actions: Var,
    /// Action half of the policy's first layer, `[n × hidden]`.
    pub projected: Var,
    pub logits: Var,
    pub value: Var,
}

impl LatentNet {
    /// Registers a freshly initialised model in `store`. Final layers of the
    /// reward, value and policy heads start at zero.
    pub fn new(store: &mut ParamStore, config: NetConfig, seed: u64) -> Result<Self> {
        Self::with_prefix(store, config, seed, "")
    }

    /// Like [`LatentNet::new`] with every parameter name prefixed, so several
    /// agents' models can live in one store.
    pub fn with_prefix(
        store: &mut ParamStore,
        config: NetConfig,
        seed: u64,
        prefix: &str,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, Purpose::Init as u64]));
        let n = |name: &str| format!("{prefix}{name}");
        let (h, l, a) = (config.hidden, config.latent, config.action_embed);
        let rng = &mut rng;
        let null = |store: &mut ParamStore, name: &str| store.add(&n(name), Tensor::zeros(&[1, h]));
        Ok(LatentNet {
            config,
            port: Linear::new(store, &n("port"), PORT_FEATS, h, rng)?,
            file: Linear::new(store, &n("file"), FILE_FEATS, h, rng)?,
            null_port: null(store, "null.port")?,
            null_file: null(store, "null.file")?,
            null_host: null(store, "null.host")?,
            host: [
                Linear::new(store, &n("host.0"), HOST_FEATS + 2 * h, h, rng)?,
                Linear::new(store, &n("host.1"), h, h, rng)?,
            ],
            subnet: [
                Linear::new(store, &n("subnet.0"), SUBNET_FEATS + h, h, rng)?,
                Linear::new(store, &n("subnet.1"), h, h, rng)?,
            ],
            out: [
                Linear::new(store, &n("repr.0"), h + GLOBAL_FEATS, h, rng)?,
                Linear::new(store, &n("repr.1"), h, l, rng)?,
            ],
            action: Linear::new(store, &n("action"), ACTION_FEATS, a, rng)?,
            gru: GruParams::new(store, &n("dyn.gru"), a, l, rng)?,
            dyn_out: Linear::new(store, &n("dyn.out"), l, l, rng)?,
            reward: [
                Linear::new(store, &n("reward.0"), l + a, h, rng)?,
                Linear::zeros(store, &n("reward.1"), h, 1)?,
            ],
            value: [
                Linear::new(store, &n("value.0"), l, h, rng)?,
                Linear::zeros(store, &n("value.1"), h, 1)?,
            ],
            policy_state: {
                let lim = (6.0 / (l + h) as f64).sqrt();
                use rand::Rng;
                let w = (0..l * h).map(|_| rng.gen_range(-lim..lim)).collect();
                store.add(&n("policy.state.w"), Tensor::new(&[l, h], w)?)?
            },
            policy_action: Linear::new(store, &n("policy.action"), a, h, rng)?,
            policy_out: store.add(&n("policy.out.w"), Tensor::zeros(&[h, 1]))?,
        })
    }

    fn mlp2(tape: &mut Tape<'_>, layers: &[Linear; 2], x: Var) -> Result<Var> {
        let y = layers[0].forward(tape, x)?;
        let y = tape.tanh(y);
        let y = layers[1].forward(tape, y)?;
        Ok(tape.tanh(y))
    }

    /// Mean of `rows` within each group; an empty group takes the null row.
    fn pool(
        tape: &mut Tape<'_>,
        rows: Option<Var>,
        groups: &[Vec<usize>],
        total: usize,
        null: ParamId,
    ) -> Result<Var> {
        let m = groups.len();
        let mut avg = vec![0.0; m * total];
        let mut empty = vec![0.0; m];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                empty[g] = 1.0;
            }
            for &i in members {
                avg[g * total + i] = 1.0 / members.len() as f64;
            }
        }
        let null = tape.param(null)?;
        let empty = tape.constant(Tensor::new(&[m, 1], empty)?);
        let fill = tape.matmul(empty, null)?;
        match rows {
            Some(rows) if total > 0 => {
                let avg = tape.constant(Tensor::new(&[m, total], avg)?);
                let pooled = tape.matmul(avg, rows)?;
                tape.add(pooled, fill)
            }
            _ => Ok(fill),
        }
    }

    /// Two-stage pooling: ports and files into hosts, hosts into subnets,
    /// subnets plus global context into the latent.
    pub fn represent(&self, tape: &mut Tape<'_>, graph: &AttributedGraph) -> Result<Var> {
        if graph.hosts.is_empty() || graph.subnets.is_empty() {
            return Err(TensorError::Contract(
                "graph has no hosts or subnets".into(),
            ));
        }
        let mut port_nodes = Vec::new();
        let mut file_nodes = Vec::new();
        let mut port_groups = Vec::with_capacity(graph.hosts.len());
        let mut file_groups = Vec::with_capacity(graph.hosts.len());
        for h in &graph.hosts {
            port_groups.push((port_nodes.len()..port_nodes.len() + h.ports.len()).collect());
            port_nodes.extend_from_slice(&h.ports);
            file_groups.push((file_nodes.len()..file_nodes.len() + h.files.len()).collect());
            file_nodes.extend_from_slice(&h.files);
        }
        let ports = if port_nodes.is_empty() {
            None
        } else {
            let x = tape.constant(graph.feature_matrix(&port_nodes, PORT_FEATS));
            let y = self.port.forward(tape, x)?;
            Some(tape.tanh(y))
        };
        let files = if file_nodes.is_empty() {
            None
        } else {
            let x = tape.constant(graph.feature_matrix(&file_nodes, FILE_FEATS));
            let y = self.file.forward(tape, x)?;
            Some(tape.tanh(y))
        };
        let port_pool = Self::pool(tape, ports, &port_groups, port_nodes.len(), self.null_port)?;
        let file_pool = Self::pool(tape, files, &file_groups, file_nodes.len(), self.null_file)?;
        let host_nodes: Vec<usize> = graph.hosts.iter().map(|h| h.node).collect();
        let host_x = tape.constant(graph.feature_matrix(&host_nodes, HOST_FEATS));
        let host_in = tape.concat(&[host_x, port_pool, file_pool], 1)?;
        let hosts = Self::mlp2(tape, &self.host, host_in)?;

        let host_groups: Vec<Vec<usize>> = graph.subnets.iter().map(|s| s.hosts.clone()).collect();
        let host_pool = Self::pool(
            tape,
            Some(hosts),
            &host_groups,
            graph.hosts.len(),
            self.null_host,
        )?;
        let subnet_nodes: Vec<usize> = graph.subnets.iter().map(|s| s.node).collect();
        let subnet_x = tape.constant(graph.feature_matrix(&subnet_nodes, SUBNET_FEATS));
        let subnet_in = tape.concat(&[subnet_x, host_pool], 1)?;
        let subnets = Self::mlp2(tape, &self.subnet, subnet_in)?;
        let pooled = tape.mean_rows(subnets)?;

        let g = tape.constant(Tensor::vector(graph.global.clone()));
        let x = tape.concat(&[pooled, g], 0)?;
        let y = self.out[0].forward(tape, x)?;
        let y = tape.tanh(y);
        let y = self.out[1].forward(tape, y)?;
        Ok(tape.tanh(y))
    }

    /// `[n × ACTION_FEATS] -> [n × action_embed]`
    pub fn embed_actions(&self, tape: &mut Tape<'_>, features: Var) -> Result<Var> {
        let y = self.action.forward(tape, features)?;
        Ok(tape.tanh(y))
    }

    /// Action half of the policy head's first layer. Depends only on the
    /// catalog, so search computes it once per decision.
    pub fn project_actions(&self, tape: &mut Tape<'_>, actions: Var) -> Result<Var> {
        self.policy_action.forward(tape, actions)
    }

    /// Per-action logits `w·tanh(s·W_s + e_i·W_a + b)`.
    pub fn policy_logits(&self, tape: &mut Tape<'_>, latent: Var, projected: Var) -> Result<Var> {
        let ws = tape.param(self.policy_state)?;
        let s = tape.matmul(latent, ws)?;
        let hidden = tape.add_row(projected, s)?;
        let hidden = tape.tanh(hidden);
        let w = tape.param(self.policy_out)?;
        let scores = tape.matmul(hidden, w)?;
        let n = tape.shape(scores)[0];
        tape.reshape(scores, &[n])
    }

    /// Policy logits and value without a tape, with the same arithmetic as
    /// [`LatentNet::policy_logits`] and [`LatentNet::value`].
    pub fn predict_values(
        &self,
        store: &ParamStore,
        latent: &[f64],
        projected: &Tensor,
    ) -> Result<(Vec<f64>, f64)> {
        let s = Tensor::vector(latent.to_vec());
        let ws = matmul(&s, store.value(self.policy_state))?;
        let (n, h) = (projected.shape()[0], projected.shape()[1]);
        let mut hidden = projected.data().to_vec();
        for row in hidden.chunks_mut(h) {
            for (o, v) in row.iter_mut().zip(ws.data()) {
                *o = crate::tensor::tanh(*o + v);
            }
        }
        let logits =
            matmul(&Tensor::new(&[n, h], hidden)?, store.value(self.policy_out))?.into_data();
        let y = dense(store, &self.value[0], &s)?;
        let y = Tensor::vector(y.data().iter().map(|v| crate::tensor::tanh(*v)).collect());
        let v = dense(store, &self.value[1], &y)?;
        Ok((logits, v.data().iter().sum()))
    }

    pub fn value(&self, tape: &mut Tape<'_>, latent: Var) -> Result<Var> {
        let y = self.value[0].forward(tape, latent)?;
        let y = tape.tanh(y);
        let y = self.value[1].forward(tape, y)?;
        Ok(tape.sum(y))
    }

    /// One latent transition for the action embedding `action` (`[A]`).
    /// Returns the next latent and the predicted reward.
    pub fn dynamics(&self, tape: &mut Tape<'_>, latent: Var, action: Var) -> Result<(Var, Var)> {
        let sa = tape.concat(&[latent, action], 0)?;
        let r = self.reward[0].forward(tape, sa)?;
        let r = tape.tanh(r);
        let r = self.reward[1].forward(tape, r)?;
        let reward = tape.sum(r);
        let h = gru_cell(tape, action, latent, &self.gru)?;
        let next = self.dyn_out.forward(tape, h)?;
        Ok((tape.tanh(next), reward))
    }

    /// Row `index` of an `[n × A]` action-embedding matrix as a vector.
    pub fn action_row(tape: &mut Tape<'_>, actions: Var, index: usize) -> Result<Var> {
        let row = tape.gather(actions, &[index])?;
        let width = tape.shape(row)[1];
        tape.reshape(row, &[width])
    }

    pub fn forward_root(
        &self,
        tape: &mut Tape<'_>,
        graph: &AttributedGraph,
        catalog: &ActionCatalog,
    ) -> Result<RootForward> {
        let latent = self.represent(tape, graph)?;
        let feats = tape.constant(action_features(graph, catalog));
        let actions = self.embed_actions(tape, feats)?;
        let projected = self.project_actions(tape, actions)?;
        let logits = self.policy_logits(tape, latent, projected)?;
        let value = self.value(tape, latent)?;
        Ok(RootForward {
            latent,
            actions,
            projected,
            logits,
            value,
        })
    }
}

/// The defenders' models in one parameter store: a single shared model, or
/// one prefixed model per agent.
#[derive(Clone, Debug)]
pub struct Policy {
    pub store: ParamStore,
    nets: Vec<LatentNet>,
}

impl Policy {
    pub fn new(config: NetConfig, shared: bool, agents: usize, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let nets = if shared {
            vec![LatentNet::new(&mut store, config, seed)?]
        } else {
            (0..agents)
                .map(|a| {
                    LatentNet::with_prefix(
                        &mut store,
                        config,
                        mix(&[seed, a as u64]),
                        &format!("a{a}."),
                    )
                })
                .collect::<Result<_>>()?
        };
        Ok(Policy { store, nets })
    }

    pub fn is_shared(&self) -> bool {
        self.nets.len() == 1
    }

    pub fn net(&self, agent: AgentId) -> &LatentNet {
        &self.nets[if self.is_shared() { 0 } else { agent }]
    }

    /// Replaces the values with a checkpoint's after a manifest check.
    pub fn load_checkpoint(&mut self, path: &Path) -> std::result::Result<(), CheckpointError> {
        let loaded = ParamStore::load(path)?;
        self.store.load_values_from(&loaded)
    }
}

fn dense(store: &ParamStore, layer: &Linear, x: &Tensor) -> Result<Tensor> {
    let mut y = matmul(x, store.value(layer.w))?;
    let b = store.value(layer.b).data();
    for row in y.data_mut().chunks_mut(b.len()) {
        for (o, bv) in row.iter_mut().zip(b) {
            *o += bv;
        }
    }
    Ok(y)
}

/// Masked log-softmax of plain logits; illegal entries are `-inf`.
pub fn log_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(l, _)| (l - max).exp())
        .sum();
    let lz = z.ln() + max;
    logits
        .iter()
        .zip(mask)
        .map(|(l, m)| if *m { l - lz } else { f64::NEG_INFINITY })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, enumerate_actions, AgentMemory};
    use crate::sim::{CyberEnv, SimConfig};
    use crate::tensor::softmax;

    fn small() -> NetConfig {
        NetConfig {
            hidden: 8,
            latent: 6,
            action_embed: 4,
        }
    }

    fn sample_graph(seed: u64, agent: usize) -> (AttributedGraph, ActionCatalog) {
        let env = CyberEnv::new(SimConfig::default(), seed).unwrap();
        let obs = env.observe(agent).unwrap();
        let g = build_graph(&obs, &AgentMemory::new(agent)).unwrap();
        let c = enumerate_actions(&g, &obs);
        (g, c)
    }

    #[test]
    fn zero_heads_give_zero_reward_and_uniform_prior() {
        let mut store = ParamStore::new();
        let net = LatentNet::new(&mut store, small(), 1).unwrap();
        let (g, c) = sample_graph(2, 0);
        let mut tape = Tape::new(&store);
        let root = net.forward_root(&mut tape, &g, &c).unwrap();
        let a = LatentNet::action_row(&mut tape, root.actions, 3).unwrap();
        let (next, r) = net.dynamics(&mut tape, root.latent, a).unwrap();
        assert_eq!(tape.item(r), 0.0);
        assert_eq!(tape.item(root.value), 0.0);
        let prior = softmax(tape.value(root.logits).data(), Some(&c.mask)).unwrap();
        let legal = c.legal_count() as f64;
        for (p, m) in prior.iter().zip(&c.mask) {
            assert_eq!(*p, if *m { 1.0 / legal } else { 0.0 });
        }
        assert!(tape.value(next).data().iter().all(|v| v.abs() <= 1.0));
        assert_eq!(tape.shape(root.latent), &[6]);
    }

    #[test]
    fn latent_is_bounded_and_deterministic() {
        let mut store = ParamStore::new();
        let net = LatentNet::new(&mut store, small(), 5).unwrap();
        let (g, _) = sample_graph(3, 1);
        let run = || {
            let mut tape = Tape::new(&store);
            let s = net.represent(&mut tape, &g).unwrap();
            tape.value(s).clone()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn different_graphs_differ() {
        let mut store = ParamStore::new();
        let net = LatentNet::new(&mut store, small(), 5).unwrap();
        let (g1, _) = sample_graph(3, 0);
        let (g2, _) = sample_graph(4, 0);
        let mut tape = Tape::new(&store);
        let a = net.represent(&mut tape, &g1).unwrap();
        let b = net.represent(&mut tape, &g2).unwrap();
        assert_ne!(tape.value(a), tape.value(b));
    }

    #[test]
    fn direct_prediction_matches_tape() {
        let mut store = ParamStore::new();
        let net = LatentNet::new(&mut store, small(), 8).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            for (i, v) in store.values_mut(id).iter_mut().enumerate() {
                *v += 0.01 * ((i * 7 + 3) % 11) as f64 - 0.05;
            }
        }
        let (g, c) = sample_graph(6, 2);
        let mut tape = Tape::new(&store);
        let root = net.forward_root(&mut tape, &g, &c).unwrap();
        let latent = tape.value(root.latent).data().to_vec();
        let projected = tape.value(root.projected).clone();
        let (logits, value) = net.predict_values(&store, &latent, &projected).unwrap();
        assert_eq!(logits, tape.value(root.logits).data());
        assert_eq!(value, tape.item(root.value));
        assert_ne!(value, 0.0);
    }

    #[test]
    fn log_softmax_matches_softmax() {
        let l = [0.3, -1.0, 2.0];
        let m = [true, false, true];
        let p = softmax(&l, Some(&m)).unwrap();
        let lp = log_softmax(&l, &m);
        assert!((lp[0].exp() - p[0]).abs() < 1e-15);
        assert!((lp[2].exp() - p[2]).abs() < 1e-15);
        assert_eq!(lp[1], f64::NEG_INFINITY);
    }
}
