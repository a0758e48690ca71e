//! The network checked against a plain-loop reimplementation, plus pooling
//! properties of the representation.

mod common;

use acdzero::graph::{action_features, ActionCatalog, AttributedGraph, Node};
use acdzero::net::{LatentNet, NetConfig};
use acdzero::tensor::{ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::sample_graph;

fn config() -> NetConfig {
    NetConfig {
        hidden: 12,
        latent: 10,
        action_embed: 6,
    }
}

fn random_net(seed: u64) -> (ParamStore, LatentNet) {
    let mut store = ParamStore::new();
    let net = LatentNet::new(&mut store, config(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.values_mut(id) {
            *v = rng.gen_range(-0.6..0.6);
        }
    }
    (store, net)
}

/// Scalar evaluation straight from named parameters.
struct Oracle<'a> {
    store: &'a ParamStore,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Oracle<'_> {
    fn param(&self, name: &str) -> &Tensor {
        self.store.value(
            self.store
                .id(name)
                .unwrap_or_else(|| panic!("no parameter {name}")),
        )
    }

    /// `x·W + b` for the layer registered under `name`.
    fn dense(&self, name: &str, x: &[f64]) -> Vec<f64> {
        let w = self.param(&format!("{name}.w"));
        let b = self.param(&format!("{name}.b")).data();
        let (rows, cols) = (w.shape()[0], w.shape()[1]);
        assert_eq!(rows, x.len(), "{name}");
        (0..cols)
            .map(|j| {
                b[j] + (0..rows)
                    .map(|i| x[i] * w.data()[i * cols + j])
                    .sum::<f64>()
            })
            .collect()
    }

    fn dense_tanh(&self, name: &str, x: &[f64]) -> Vec<f64> {
        self.dense(name, x).into_iter().map(f64::tanh).collect()
    }

    fn mlp2(&self, name: &str, x: &[f64]) -> Vec<f64> {
        let y = self.dense_tanh(&format!("{name}.0"), x);
        self.dense_tanh(&format!("{name}.1"), &y)
    }

    fn mean_or_null(&self, rows: &[Vec<f64>], null: &str) -> Vec<f64> {
        if rows.is_empty() {
            return self.param(null).data().to_vec();
        }
        let mut out = vec![0.0; rows[0].len()];
        for r in rows {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v / rows.len() as f64;
            }
        }
        out
    }

    fn represent(&self, g: &AttributedGraph) -> Vec<f64> {
        let feats = |n: usize| g.nodes[n].features.clone();
        let hosts: Vec<Vec<f64>> = g
            .hosts
            .iter()
            .map(|h| {
                let ports: Vec<_> = h
                    .ports
                    .iter()
                    .map(|&p| self.dense_tanh("port", &feats(p)))
                    .collect();
                let files: Vec<_> = h
                    .files
                    .iter()
                    .map(|&f| self.dense_tanh("file", &feats(f)))
                    .collect();
                let mut x = feats(h.node);
                x.extend(self.mean_or_null(&ports, "null.port"));
                x.extend(self.mean_or_null(&files, "null.file"));
                self.mlp2("host", &x)
            })
            .collect();
        let subnets: Vec<Vec<f64>> = g
            .subnets
            .iter()
            .map(|s| {
                let members: Vec<_> = s.hosts.iter().map(|&i| hosts[i].clone()).collect();
                let mut x = feats(s.node);
                x.extend(self.mean_or_null(&members, "null.host"));
                self.mlp2("subnet", &x)
            })
            .collect();
        let mut x = self.mean_or_null(&subnets, "null.host");
        x.extend(&g.global);
        self.mlp2("repr", &x)
    }

    fn logits(&self, latent: &[f64], g: &AttributedGraph, catalog: &ActionCatalog) -> Vec<f64> {
        let feats = action_features(g, catalog);
        let w = feats.shape()[1];
        let ws = self.param("policy.state.w");
        let h = ws.shape()[1];
        let s: Vec<f64> = (0..h)
            .map(|j| {
                (0..latent.len())
                    .map(|i| latent[i] * ws.data()[i * h + j])
                    .sum()
            })
            .collect();
        let out = self.param("policy.out.w").data();
        (0..catalog.len())
            .map(|a| {
                let e = self.dense_tanh("action", &feats.data()[a * w..(a + 1) * w]);
                let p = self.dense("policy.action", &e);
                (0..h).map(|j| out[j] * (s[j] + p[j]).tanh()).sum()
            })
            .collect()
    }

    fn value(&self, latent: &[f64]) -> f64 {
        let y = self.dense_tanh("value.0", latent);
        self.dense("value.1", &y)[0]
    }

    fn dynamics(&self, latent: &[f64], action: &[f64]) -> (Vec<f64>, f64) {
        let sa: Vec<f64> = latent.iter().chain(action).copied().collect();
        let r = self.dense_tanh("reward.0", &sa);
        let reward = self.dense("reward.1", &r)[0];
        let xh: Vec<f64> = action.iter().chain(latent).copied().collect();
        let z: Vec<f64> = self
            .dense("dyn.gru.update", &xh)
            .into_iter()
            .map(sigmoid)
            .collect();
        let rg: Vec<f64> = self
            .dense("dyn.gru.reset", &xh)
            .into_iter()
            .map(sigmoid)
            .collect();
        let xrh: Vec<f64> = action
            .iter()
            .copied()
            .chain(latent.iter().zip(&rg).map(|(h, r)| h * r))
            .collect();
        let cand = self.dense_tanh("dyn.gru.candidate", &xrh);
        let h: Vec<f64> = (0..latent.len())
            .map(|i| (1.0 - z[i]) * latent[i] + z[i] * cand[i])
            .collect();
        (self.dense_tanh("dyn.out", &h), reward)
    }
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn forward_pass_matches_scalar_oracle() {
    for seed in 0..12u64 {
        let (graph, catalog) = sample_graph(500 + seed, (seed as usize % 4) * 5, seed as usize % 5);
        let (store, net) = random_net(seed);
        let oracle = Oracle { store: &store };
        let mut tape = Tape::new(&store);
        let root = net.forward_root(&mut tape, &graph, &catalog).unwrap();
        let latent = tape.value(root.latent).data().to_vec();

        assert!(max_gap(&latent, &oracle.represent(&graph)) < 1e-12);
        assert!(
            max_gap(
                tape.value(root.logits).data(),
                &oracle.logits(&latent, &graph, &catalog)
            ) < 1e-12
        );
        assert!((tape.item(root.value) - oracle.value(&latent)).abs() < 1e-12);

        let a = (seed as usize * 7) % catalog.len();
        let action = LatentNet::action_row(&mut tape, root.actions, a).unwrap();
        let action_vec = tape.value(action).data().to_vec();
        let (next, reward) = net.dynamics(&mut tape, root.latent, action).unwrap();
        let (next_o, reward_o) = oracle.dynamics(&latent, &action_vec);
        assert!(max_gap(tape.value(next).data(), &next_o) < 1e-12);
        assert!((tape.item(reward) - reward_o).abs() < 1e-12);
    }
}

/// Copies every host, with its ports and files, into the same subnet.
fn duplicate_hosts(g: &AttributedGraph) -> AttributedGraph {
    let mut out = g.clone();
    let copy_node = |out: &mut AttributedGraph, n: usize| -> usize {
        let node: Node = g.nodes[n].clone();
        out.nodes.push(node);
        out.nodes.len() - 1
    };
    let original = g.hosts.len();
    for i in 0..original {
        let h = &g.hosts[i];
        let mut copy = h.clone();
        copy.node = copy_node(&mut out, h.node);
        copy.ports = h.ports.iter().map(|&p| copy_node(&mut out, p)).collect();
        copy.files = h.files.iter().map(|&f| copy_node(&mut out, f)).collect();
        out.hosts.push(copy);
    }
    for s in &mut out.subnets {
        let extra: Vec<usize> = s.hosts.iter().map(|&i| i + original).collect();
        s.hosts.extend(extra);
    }
    out
}

#[test]
fn duplicated_hosts_leave_the_latent_unchanged() {
    for seed in 0..10u64 {
        let (graph, _) = sample_graph(700 + seed, 4 * seed as usize, seed as usize % 5);
        let (store, net) = random_net(seed);
        let run = |g: &AttributedGraph| {
            let mut tape = Tape::new(&store);
            let z = net.represent(&mut tape, g).unwrap();
            tape.value(z).data().to_vec()
        };
        let doubled = duplicate_hosts(&graph);
        assert_eq!(doubled.hosts.len(), 2 * graph.hosts.len());
        assert!(max_gap(&run(&graph), &run(&doubled)) < 1e-12);
    }
}

#[test]
fn changing_a_host_changes_the_latent() {
    let (graph, _) = sample_graph(901, 3, 0);
    let (store, net) = random_net(3);
    let run = |g: &AttributedGraph| {
        let mut tape = Tape::new(&store);
        let z = net.represent(&mut tape, g).unwrap();
        tape.value(z).data().to_vec()
    };
    let mut edited = graph.clone();
    let node = edited.hosts[0].node;
    edited.nodes[node].features[0] += 1.0;
    assert!(max_gap(&run(&graph), &run(&edited)) > 1e-6);
}
