//! Latent-space Monte Carlo tree search.
//!
//! Selection uses the pUCT score with a visit-dependent exploration weight
//! and tree-wide min-max normalised values. Rewards and values inside the
//! tree come only from the model; the simulator is never consulted.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ActionCatalog, AttributedGraph};
use crate::net::LatentNet;
use crate::tensor::{softmax, ParamStore, Tape, Tensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("no legal action to search over")]
    EmptyMask,
    #[error("policy extraction needs at least one root visit")]
    NoVisits,
    #[error("mask has {mask} entries, model scores {model}")]
    Width { mask: usize, model: usize },
    #[error("invalid search config: {0}")]
    Config(String),
    #[error("model failure: {0}")]
    Model(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub num_simulations: usize,
    pub c_base: f64,
    pub c_init: f64,
    /// When false the exploration weight stays at `c_init`.
    pub dynamic_c1: bool,
    pub dirichlet_alpha: f64,
    pub noise_fraction: f64,
    pub train_temperature: f64,
    pub eval_temperature: f64,
    pub discount: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            num_simulations: 16,
            c_base: 19652.0,
            c_init: 1.25,
            dynamic_c1: true,
            dirichlet_alpha: 0.3,
            noise_fraction: 0.25,
            train_temperature: 1.0,
            eval_temperature: 0.1,
            discount: 0.99,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let ok = self.num_simulations > 0
            && self.c_base > 0.0
            && self.c_init > 0.0
            && self.dirichlet_alpha > 0.0
            && (0.0..=1.0).contains(&self.noise_fraction)
            && self.train_temperature > 0.0
            && self.eval_temperature > 0.0
            && self.discount > 0.0
            && self.discount <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(SearchError::Config(format!("{self:?}")))
        }
    }

    pub fn c1(&self, total_visits: u32) -> f64 {
        if self.dynamic_c1 {
            self.c_init + ((total_visits as f64 + self.c_base + 1.0) / self.c_base).ln()
        } else {
            self.c_init
        }
    }

    pub fn temperature(&self, mode: SearchMode) -> f64 {
        match mode {
            SearchMode::Train => self.train_temperature,
            SearchMode::Eval => self.eval_temperature,
        }
    }
}

/// What the search needs from a model: a prior and value for a state, and
/// a transition with its predicted reward.
pub trait Model {
    type State: Clone;

    fn predict(&self, state: &Self::State, mask: &[bool]) -> Result<(Vec<f64>, f64), SearchError>;

    fn dynamics(
        &self,
        state: &Self::State,
        action: usize,
    ) -> Result<(Self::State, f64), SearchError>;
}

/// Statistics of one (state, action) edge.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EdgeStats {
    pub visits: u32,
    pub q: f64,
    pub prior: f64,
    pub reward: f64,
    pub child: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct SearchNode<S> {
    pub state: S,
    pub value: f64,
    pub edges: Vec<EdgeStats>,
}

impl<S> SearchNode<S> {
    pub fn total_visits(&self) -> u32 {
        self.edges.iter().map(|e| e.visits).sum()
    }
}

/// Running bounds of every backed-up Q in the tree.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl Default for MinMax {
    fn default() -> Self {
        MinMax {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }
}

impl MinMax {
    pub fn update(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    /// Maps `q` to `[0, 1]`; degenerate bounds give 0.
    pub fn normalize(&self, q: f64) -> f64 {
        if self.max > self.min {
            ((q - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// pUCT argmax over legal edges, lowest index on ties. An all-unvisited
/// node uses 1 in place of the square root so the prior still decides.
pub fn select_child(
    edges: &[EdgeStats],
    mask: &[bool],
    bounds: &MinMax,
    config: &SearchConfig,
) -> usize {
    let total: u32 = edges.iter().map(|e| e.visits).sum();
    let c1 = config.c1(total);
    let sqrt_total = if total == 0 {
        1.0
    } else {
        (total as f64).sqrt()
    };
    let mut best = None;
    let mut best_score = f64::NEG_INFINITY;
    for (a, e) in edges.iter().enumerate() {
        if !mask[a] {
            continue;
        }
        let q = if e.visits > 0 {
            bounds.normalize(e.q)
        } else {
            0.0
        };
        let score = q + e.prior * sqrt_total / (1.0 + e.visits as f64) * c1;
        if best.is_none() || score > best_score {
            best = Some(a);
            best_score = score;
        }
    }
    best.expect("mask has a legal entry")
}

/// Returns along a path per the n-step bootstrap: `G_k = r_k + γ·G_{k+1}`
/// with `G_l = leaf_value`.
pub fn path_returns(rewards: &[f64], leaf_value: f64, discount: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = leaf_value;
    for k in (0..rewards.len()).rev() {
        g = rewards[k] + discount * g;
        out[k] = g;
    }
    out
}

/// Incremental mean update `Q ← (N·Q + G)/(N + 1)`, `N ← N + 1`.
pub fn update_edge(edge: &mut EdgeStats, g: f64) {
    let n = edge.visits as f64;
    edge.q = (n * edge.q + g) / (n + 1.0);
    edge.visits += 1;
}

/// Mixes Dirichlet(α) noise into the legal priors.
pub fn add_root_noise<R: Rng>(
    priors: &mut [f64],
    mask: &[bool],
    alpha: f64,
    fraction: f64,
    rng: &mut R,
) {
    if fraction == 0.0 {
        return;
    }
    let legal: Vec<usize> = (0..priors.len()).filter(|&i| mask[i]).collect();
    let noise = dirichlet(legal.len(), alpha, rng);
    for (&i, eta) in legal.iter().zip(noise) {
        priors[i] = (1.0 - fraction) * priors[i] + fraction * eta;
    }
}

/// One Dirichlet(α, ..., α) draw via normalised Gamma samples.
pub fn dirichlet<R: Rng>(n: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha is positive");
    let mut x: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = x.iter().sum();
    if sum > 0.0 {
        for v in &mut x {
            *v /= sum;
        }
    } else {
        // Every draw underflowed; fall back to the symmetric mean.
        x.fill(1.0 / n as f64);
    }
    x
}

/// Visit-count policy `N^{1/τ}`; `τ = 0` is the argmax with lowest-index
/// ties.
pub fn extract_policy(visits: &[u32], temperature: f64) -> Result<Vec<f64>, SearchError> {
    let max = visits.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(SearchError::NoVisits);
    }
    if temperature == 0.0 {
        let best = visits.iter().position(|&n| n == max).unwrap();
        return Ok((0..visits.len())
            .map(|i| if i == best { 1.0 } else { 0.0 })
            .collect());
    }
    // Powers relative to the largest count keep N^{1/τ} finite for small τ.
    let lmax = (max as f64).ln();
    let w: Vec<f64> = visits
        .iter()
        .map(|&n| {
            if n == 0 {
                0.0
            } else {
                (((n as f64).ln() - lmax) / temperature).exp()
            }
        })
        .collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / z).collect())
}

/// One simulation's backup, for tracing and exactness checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub simulation: usize,
    /// `(node, action)` from the root down to the new leaf's parent edge.
    pub path: Vec<(usize, usize)>,
    pub rewards: Vec<f64>,
    pub leaf_value: f64,
    pub returns: Vec<f64>,
    pub leaf: usize,
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub policy: Vec<f64>,
    pub root_value: f64,
    pub visits: Vec<u32>,
    pub principal_variation: Vec<usize>,
    /// Root prior before noise.
    pub prior: Vec<f64>,
    pub trace: Vec<TraceRecord>,
}

/// A finished search tree; node 0 is the root.
#[derive(Clone, Debug)]
pub struct Tree<S> {
    pub nodes: Vec<SearchNode<S>>,
    pub bounds: MinMax,
    pub mask: Vec<bool>,
}

impl<S> Tree<S> {
    pub fn root(&self) -> &SearchNode<S> {
        &self.nodes[0]
    }

    pub fn principal_variation(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut node = 0;
        loop {
            let edges = &self.nodes[node].edges;
            let best = edges
                .iter()
                .enumerate()
                .filter(|(_, e)| e.visits > 0)
                .max_by(|(i, a), (j, b)| a.visits.cmp(&b.visits).then(j.cmp(i)));
            match best {
                Some((a, e)) => {
                    out.push(a);
                    match e.child {
                        Some(c) => node = c,
                        None => break,
                    }
                }
                None => break,
            }
        }
        out
    }
}

fn check_distribution(prior: &[f64], mask: &[bool]) -> Result<(), SearchError> {
    if prior.len() != mask.len() {
        return Err(SearchError::Width {
            mask: mask.len(),
            model: prior.len(),
        });
    }
    Ok(())
}

/// Runs the configured number of simulations from `root`.
///
/// Returns the tree alongside the result so callers and tests can inspect
/// every edge.
pub fn search_tree<M: Model, R: Rng>(
    model: &M,
    root: M::State,
    mask: &[bool],
    config: &SearchConfig,
    mode: SearchMode,
    rng: &mut R,
) -> Result<(SearchResult, Tree<M::State>), SearchError> {
    config.validate()?;
    if !mask.iter().any(|m| *m) {
        return Err(SearchError::EmptyMask);
    }
    let (prior, value) = model.predict(&root, mask)?;
    check_distribution(&prior, mask)?;
    let mut noisy = prior.clone();
    if mode == SearchMode::Train {
        add_root_noise(
            &mut noisy,
            mask,
            config.dirichlet_alpha,
            config.noise_fraction,
            rng,
        );
    }
    let edges = |p: &[f64]| {
        p.iter()
            .map(|&prior| EdgeStats {
                prior,
                ..Default::default()
            })
            .collect()
    };
    let mut tree = Tree {
        nodes: vec![SearchNode {
            state: root,
            value,
            edges: edges(&noisy),
        }],
        bounds: MinMax::default(),
        mask: mask.to_vec(),
    };
    let mut trace = Vec::with_capacity(config.num_simulations);

    for sim in 0..config.num_simulations {
        let mut node = 0;
        let mut path = Vec::new();
        let mut rewards = Vec::new();
        let leaf;
        loop {
            let a = select_child(&tree.nodes[node].edges, mask, &tree.bounds, config);
            path.push((node, a));
            match tree.nodes[node].edges[a].child {
                Some(c) => {
                    rewards.push(tree.nodes[node].edges[a].reward);
                    node = c;
                }
                None => {
                    let (state, reward) = model.dynamics(&tree.nodes[node].state, a)?;
                    let (p, v) = model.predict(&state, mask)?;
                    check_distribution(&p, mask)?;
                    leaf = tree.nodes.len();
                    tree.nodes.push(SearchNode {
                        state,
                        value: v,
                        edges: edges(&p),
                    });
                    let e = &mut tree.nodes[node].edges[a];
                    e.child = Some(leaf);
                    e.reward = reward;
                    rewards.push(reward);
                    break;
                }
            }
        }
        let leaf_value = tree.nodes[leaf].value;
        let returns = path_returns(&rewards, leaf_value, config.discount);
        for (&(n, a), &g) in path.iter().zip(&returns) {
            let e = &mut tree.nodes[n].edges[a];
            update_edge(e, g);
            tree.bounds.update(e.q);
        }
        trace.push(TraceRecord {
            simulation: sim,
            path,
            rewards,
            leaf_value,
            returns,
            leaf,
        });
    }

    let root = tree.root();
    let visits: Vec<u32> = root.edges.iter().map(|e| e.visits).collect();
    let total = root.total_visits() as f64;
    let root_value = root
        .edges
        .iter()
        .map(|e| e.visits as f64 * e.q)
        .sum::<f64>()
        / total;
    let policy = extract_policy(&visits, config.temperature(mode))?;
    let result = SearchResult {
        policy,
        root_value,
        visits,
        principal_variation: tree.principal_variation(),
        prior,
        trace,
    };
    Ok((result, tree))
}

pub fn run_search<M: Model, R: Rng>(
    model: &M,
    root: M::State,
    mask: &[bool],
    config: &SearchConfig,
    mode: SearchMode,
    rng: &mut R,
) -> Result<SearchResult, SearchError> {
    search_tree(model, root, mask, config, mode, rng).map(|(r, _)| r)
}

/// Writes one JSON line per simulation: index, path actions and returns.
pub fn write_trace<W: Write>(trace: &[TraceRecord], mut w: W) -> std::io::Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        simulation: usize,
        actions: Vec<usize>,
        returns: &'a [f64],
    }
    for t in trace {
        let line = Line {
            simulation: t.simulation,
            actions: t.path.iter().map(|p| p.1).collect(),
            returns: &t.returns,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// The learned model bound to one decision's graph and catalog. Action
/// embeddings and their policy projection are computed once and reused at
/// every node.
pub struct LatentModel<'a> {
    net: &'a LatentNet,
    store: &'a ParamStore,
    actions: Tensor,
    projected: Tensor,
}

/// Root evaluation shared by search and training.
#[derive(Clone, Debug)]
pub struct RootEval {
    pub latent: Vec<f64>,
    pub logits: Vec<f64>,
    pub prior: Vec<f64>,
    pub value: f64,
}

impl<'a> LatentModel<'a> {
    pub fn new(
        net: &'a LatentNet,
        store: &'a ParamStore,
        graph: &AttributedGraph,
        catalog: &ActionCatalog,
    ) -> Result<(Self, RootEval), SearchError> {
        let mut tape = Tape::new(store);
        let root = net.forward_root(&mut tape, graph, catalog)?;
        let logits = tape.value(root.logits).data().to_vec();
        let prior = softmax(&logits, Some(&catalog.mask))?;
        let eval = RootEval {
            latent: tape.value(root.latent).data().to_vec(),
            logits,
            prior,
            value: tape.item(root.value),
        };
        let model = LatentModel {
            net,
            store,
            actions: tape.value(root.actions).clone(),
            projected: tape.value(root.projected).clone(),
        };
        Ok((model, eval))
    }
}

impl Model for LatentModel<'_> {
    type State = Vec<f64>;

    fn predict(&self, state: &Vec<f64>, mask: &[bool]) -> Result<(Vec<f64>, f64), SearchError> {
        let (logits, value) = self
            .net
            .predict_values(self.store, state, &self.projected)?;
        Ok((softmax(&logits, Some(mask))?, value))
    }

    fn dynamics(&self, state: &Vec<f64>, action: usize) -> Result<(Vec<f64>, f64), SearchError> {
        let mut tape = Tape::new(self.store);
        let s = tape.constant(Tensor::vector(state.clone()));
        let width = self.actions.shape()[1];
        let row = self.actions.data()[action * width..(action + 1) * width].to_vec();
        let a = tape.constant(Tensor::vector(row));
        let (next, reward) = self.net.dynamics(&mut tape, s, a)?;
        Ok((tape.value(next).data().to_vec(), tape.item(reward)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn edges(n: &[u32], q: &[f64], p: &[f64]) -> Vec<EdgeStats> {
        n.iter()
            .zip(q)
            .zip(p)
            .map(|((&visits, &q), &prior)| EdgeStats {
                visits,
                q,
                prior,
                ..Default::default()
            })
            .collect()
    }

    #[test]
    fn selection_cases() {
        let c = SearchConfig::default();
        let b = MinMax::default();
        let m = [true, true];
        assert_eq!(
            select_child(&edges(&[0, 0], &[0.0, 0.0], &[0.8, 0.2]), &m, &b, &c),
            0
        );
        let mut b2 = MinMax::default();
        b2.update(0.3);
        assert_eq!(
            select_child(&edges(&[5, 1], &[0.3, 0.3], &[0.5, 0.5]), &m, &b2, &c),
            1
        );
        assert_eq!(
            select_child(&edges(&[2, 2], &[0.3, 0.3], &[0.5, 0.5]), &m, &b2, &c),
            0
        );
        assert_eq!(
            select_child(
                &edges(&[0, 0], &[0.0, 0.0], &[0.8, 0.2]),
                &[false, true],
                &b,
                &c
            ),
            1
        );
    }

    #[test]
    fn c1_schedule() {
        let c = SearchConfig::default();
        assert_eq!(c.c1(0), 1.25 + (19653.0f64 / 19652.0).ln());
        let fixed = SearchConfig {
            dynamic_c1: false,
            ..c
        };
        assert_eq!(fixed.c1(1000), 1.25);
    }

    #[test]
    fn backup_arithmetic() {
        let mut e = EdgeStats::default();
        update_edge(&mut e, -3.0);
        assert_eq!((e.q, e.visits), (-3.0, 1));
        let mut e = EdgeStats {
            visits: 1,
            q: 2.0,
            ..Default::default()
        };
        update_edge(&mut e, 4.0);
        assert_eq!((e.q, e.visits), (3.0, 2));
        let g = path_returns(&[1.0, 0.5], 2.0, 0.99);
        assert!((g[0] - 3.4552).abs() < 1e-12);
        assert!((g[1] - (0.5 + 0.99 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn policy_extraction() {
        assert_eq!(extract_policy(&[3, 1], 1.0).unwrap(), vec![0.75, 0.25]);
        let p = extract_policy(&[3, 1], 0.1).unwrap();
        let z = 3f64.powi(10) + 1.0;
        assert!((p[0] - 3f64.powi(10) / z).abs() < 1e-15);
        assert!((p[1] - 1.0 / z).abs() < 1e-15);
        for tau in [0.1, 0.5, 1.0, 3.0] {
            assert_eq!(extract_policy(&[7, 7], tau).unwrap(), vec![0.5, 0.5]);
        }
        assert_eq!(
            extract_policy(&[2, 5, 5], 0.0).unwrap(),
            vec![0.0, 1.0, 0.0]
        );
        assert_eq!(extract_policy(&[0, 0], 1.0), Err(SearchError::NoVisits));
    }

    #[test]
    fn noise_mixing() {
        let mask = [true, false, true, true];
        let base = vec![0.5, 0.0, 0.25, 0.25];
        let mut p = base.clone();
        add_root_noise(&mut p, &mask, 0.3, 0.0, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(p, base);

        let mut p = base.clone();
        add_root_noise(&mut p, &mask, 0.3, 0.25, &mut ChaCha8Rng::seed_from_u64(1));
        let eta = dirichlet(3, 0.3, &mut ChaCha8Rng::seed_from_u64(1));
        for (slot, &i) in [0usize, 2, 3].iter().enumerate() {
            assert_eq!(p[i], 0.75 * base[i] + 0.25 * eta[slot]);
        }
        assert_eq!(p[1], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    /// Fixed table model: state is the depth-indexed action path.
    struct Bandit {
        rewards: Vec<f64>,
    }

    impl Model for Bandit {
        type State = usize;
        fn predict(&self, _: &usize, mask: &[bool]) -> Result<(Vec<f64>, f64), SearchError> {
            Ok((softmax(&vec![0.0; mask.len()], Some(mask))?, 0.0))
        }
        fn dynamics(&self, s: &usize, a: usize) -> Result<(usize, f64), SearchError> {
            Ok((s + 1, if *s == 0 { self.rewards[a] } else { 0.0 }))
        }
    }

    #[test]
    fn single_simulation_is_one_hot() {
        let m = Bandit {
            rewards: vec![0.0, 1.0, 0.5],
        };
        let c = SearchConfig {
            num_simulations: 1,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = run_search(&m, 0, &[true; 3], &c, SearchMode::Eval, &mut rng).unwrap();
        assert_eq!(r.policy, vec![1.0, 0.0, 0.0]);
        assert_eq!(r.visits.iter().sum::<u32>(), 1);
    }

    #[test]
    fn edges_are_memoized_and_visits_conserved() {
        let m = Bandit {
            rewards: vec![0.0, 1.0, 0.5],
        };
        let c = SearchConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (r, tree) = search_tree(&m, 0, &[true; 3], &c, SearchMode::Train, &mut rng).unwrap();
        assert_eq!(r.visits.iter().sum::<u32>(), 16);
        // One new node per simulation, never a duplicate child.
        assert_eq!(tree.nodes.len(), 17);
        for t in &r.trace {
            assert_eq!(t.path[0].0, 0);
            assert_eq!(t.leaf, t.simulation + 1);
        }
        let most = (0..3)
            .max_by_key(|&a| (r.visits[a], std::cmp::Reverse(a)))
            .unwrap();
        assert_eq!(r.principal_variation[0], most);
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let m = Bandit {
            rewards: vec![0.2, 0.1, 0.5],
        };
        let c = SearchConfig::default();
        let a = run_search(
            &m,
            0,
            &[true; 3],
            &c,
            SearchMode::Eval,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let b = run_search(
            &m,
            0,
            &[true; 3],
            &c,
            SearchMode::Eval,
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.root_value, b.root_value);
    }

    #[test]
    fn empty_mask_is_error() {
        let m = Bandit { rewards: vec![0.0] };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = run_search(
            &m,
            0,
            &[false],
            &SearchConfig::default(),
            SearchMode::Eval,
            &mut rng,
        );
        assert_eq!(r.unwrap_err(), SearchError::EmptyMask);
    }

    #[test]
    fn trace_dump_lines() {
        let m = Bandit {
            rewards: vec![0.0, 1.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = run_search(
            &m,
            0,
            &[true; 2],
            &SearchConfig::default(),
            SearchMode::Eval,
            &mut rng,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_trace(&r.trace, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 16);
    }
}
