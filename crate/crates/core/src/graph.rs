//! Attributed-graph view of one defender's observation, and the action
//! catalog that maps policy indices back to simulator commands.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::sim::{
    ActionKind, AgentId, BlueAction, HostId, LocalObservation, ObservedFile, ObservedHost, Service,
    SubnetId, OS_TAGS,
};
use crate::tensor::Tensor;

pub const HOST_FEATS: usize = 12;
pub const PORT_FEATS: usize = 19;
pub const FILE_FEATS: usize = 2;
pub const SUBNET_FEATS: usize = 12;
pub const GLOBAL_FEATS: usize = 6;
pub const TEMPLATES: usize = 6;
pub const ACTION_FEATS: usize = TEMPLATES + HOST_FEATS + 2 + SUBNET_FEATS + 1;

/// Upper bounds of the port buckets; the last bucket ends at 65536.
const PORT_BUCKETS: [u32; 8] = [32, 128, 1024, 4096, 8192, 16384, 49152, 65536];
/// Steps after which a restore no longer registers as recent.
const RESTORE_WINDOW: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("action index {index} out of range for catalog of {len}")]
    Index { index: usize, len: usize },
    #[error("action index {0} is masked illegal")]
    Masked(usize),
    #[error("observation belongs to agent {obs}, memory to agent {memory}")]
    Agent { obs: AgentId, memory: AgentId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum NodeKind {
    Host,
    Subnet,
    Port,
    File,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum EdgeKind {
    PortOf,
    FileOn,
    HostInSubnet,
    SubnetLink,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Node {
    pub kind: NodeKind,
    /// Host or subnet id, port number, or file position on its host.
    pub entity: usize,
    pub features: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
}

/// Index into `AttributedGraph::nodes` plus the grouping used for pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct HostNode {
    pub node: usize,
    pub host: HostId,
    pub ports: Vec<usize>,
    pub files: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubnetNode {
    pub node: usize,
    pub subnet: SubnetId,
    pub owned: bool,
    /// Positions in `AttributedGraph::hosts`.
    pub hosts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributedGraph {
    pub agent: AgentId,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub global: Vec<f64>,
    pub hosts: Vec<HostNode>,
    pub subnets: Vec<SubnetNode>,
}

/// What a defender carries between steps: analysis results and the steps
/// of its own restores.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AgentMemory {
    pub agent: AgentId,
    pub files: BTreeMap<HostId, Vec<ObservedFile>>,
    pub last_restore: BTreeMap<HostId, usize>,
}

impl AgentMemory {
    pub fn new(agent: AgentId) -> Self {
        AgentMemory {
            agent,
            ..Default::default()
        }
    }

    /// Folds fresh analysis results into memory.
    pub fn observe(&mut self, obs: &LocalObservation) {
        for h in &obs.hosts {
            if let Some(files) = &h.analysis {
                self.files.insert(h.id, files.clone());
            }
        }
    }

    /// Records the agent's own command issued at step `t`.
    pub fn record_action(&mut self, action: &ActionKind, t: usize) {
        if let ActionKind::Restore(h) = action {
            self.last_restore.insert(*h, t);
            self.files.remove(h);
        }
    }
}

fn one_hot(out: &mut Vec<f64>, n: usize, i: usize) {
    out.extend((0..n).map(|j| if j == i { 1.0 } else { 0.0 }));
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

pub fn port_bucket(port: u16) -> usize {
    PORT_BUCKETS
        .iter()
        .position(|&hi| (port as u32) < hi)
        .expect("u16 ports are below 65536")
}

pub fn host_features(h: &ObservedHost, memory: &AgentMemory, t: usize) -> Vec<f64> {
    let mut f = Vec::with_capacity(HOST_FEATS);
    one_hot(&mut f, 3, h.role.index());
    one_hot(&mut f, OS_TAGS, h.os);
    f.push(flag(h.alerts.scan_detected));
    f.push(flag(h.alerts.exploit_detected));
    f.push(flag(h.alerts.decoy_triggered));
    f.push((h.decoys.len() as f64 / 2.0).min(1.0));
    let since = memory.last_restore.get(&h.id).map_or(1.0, |&r| {
        (t.saturating_sub(r) as f64 / RESTORE_WINDOW).min(1.0)
    });
    f.push(since);
    f
}

pub fn port_features(s: &Service, decoy: bool) -> Vec<f64> {
    let mut f = Vec::with_capacity(PORT_FEATS);
    one_hot(&mut f, 8, s.kind.index());
    one_hot(&mut f, PORT_BUCKETS.len(), port_bucket(s.port));
    f.push(flag(s.is_ephemeral()));
    f.push(flag(s.is_default_port()));
    f.push(flag(decoy));
    f
}

pub fn file_features(file: &ObservedFile) -> Vec<f64> {
    vec![file.density, flag(file.signed)]
}

/// The 8 message bits, most significant first.
pub fn message_bits(m: u8) -> [f64; 8] {
    let mut out = [0.0; 8];
    for (j, v) in out.iter_mut().enumerate() {
        *v = ((m >> (7 - j)) & 1) as f64;
    }
    out
}

pub fn build_global_context(obs: &LocalObservation) -> Vec<f64> {
    let mut g = Vec::with_capacity(GLOBAL_FEATS);
    g.push(obs.timestep as f64 / obs.horizon as f64);
    one_hot(&mut g, 3, obs.phase as usize);
    let alerted = obs.hosts.iter().filter(|h| h.alerts.any()).count();
    g.push(if obs.hosts.is_empty() {
        0.0
    } else {
        alerted as f64 / obs.hosts.len() as f64
    });
    let blocked = obs.links.iter().filter(|l| l.blocked).count();
    g.push(if obs.links.is_empty() {
        0.0
    } else {
        blocked as f64 / obs.links.len() as f64
    });
    g
}

pub fn build_graph(
    obs: &LocalObservation,
    memory: &AgentMemory,
) -> Result<AttributedGraph, GraphError> {
    if obs.agent != memory.agent {
        return Err(GraphError::Agent {
            obs: obs.agent,
            memory: memory.agent,
        });
    }
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut hosts = Vec::new();

    // Subnet nodes: owned subnets first, then stubs for adjacent foreign
    // subnets, both ascending.
    let mut subnet_ids: Vec<(SubnetId, bool)> = obs.subnets.iter().map(|&s| (s, true)).collect();
    let mut foreign: BTreeMap<SubnetId, AgentId> = BTreeMap::new();
    for l in &obs.links {
        if l.owner_a != obs.agent {
            foreign.insert(l.a, l.owner_a);
        }
        if l.owner_b != obs.agent {
            foreign.insert(l.b, l.owner_b);
        }
    }
    subnet_ids.extend(foreign.keys().map(|&s| (s, false)));

    let owned_msg = obs.inbox.iter().fold(0u8, |acc, m| acc | m);
    let mut subnet_slot = BTreeMap::new();
    let mut subnets = Vec::new();
    for &(s, owned) in &subnet_ids {
        let msg = if owned {
            owned_msg
        } else {
            let owner = foreign[&s];
            obs.inbox_from
                .iter()
                .position(|&a| a == owner)
                .map_or(0, |slot| obs.inbox[slot])
        };
        let links: Vec<_> = obs.links.iter().filter(|l| l.a == s || l.b == s).collect();
        let blocked = links.iter().filter(|l| l.blocked).count();
        let mut f = message_bits(msg).to_vec();
        f.push(flag(owned));
        f.push(flag(!owned));
        f.push(if links.is_empty() {
            0.0
        } else {
            blocked as f64 / links.len() as f64
        });
        f.push(flag(blocked > 0));
        subnet_slot.insert(s, subnets.len());
        subnets.push(SubnetNode {
            node: nodes.len(),
            subnet: s,
            owned,
            hosts: Vec::new(),
        });
        nodes.push(Node {
            kind: NodeKind::Subnet,
            entity: s,
            features: f,
        });
    }

    for h in &obs.hosts {
        let host_node = nodes.len();
        nodes.push(Node {
            kind: NodeKind::Host,
            entity: h.id,
            features: host_features(h, memory, obs.timestep),
        });
        let mut ports = Vec::new();
        let real = h.services.iter().map(|s| (s, false));
        let decoys = h.decoys.iter().map(|s| (s, true));
        for (s, decoy) in real.chain(decoys) {
            ports.push(nodes.len());
            edges.push(Edge {
                src: nodes.len(),
                dst: host_node,
                kind: EdgeKind::PortOf,
            });
            nodes.push(Node {
                kind: NodeKind::Port,
                entity: s.port as usize,
                features: port_features(s, decoy),
            });
        }
        let mut files = Vec::new();
        for (i, file) in memory.files.get(&h.id).into_iter().flatten().enumerate() {
            files.push(nodes.len());
            edges.push(Edge {
                src: nodes.len(),
                dst: host_node,
                kind: EdgeKind::FileOn,
            });
            nodes.push(Node {
                kind: NodeKind::File,
                entity: i,
                features: file_features(file),
            });
        }
        let slot = subnet_slot[&h.subnet];
        edges.push(Edge {
            src: host_node,
            dst: subnets[slot].node,
            kind: EdgeKind::HostInSubnet,
        });
        subnets[slot].hosts.push(hosts.len());
        hosts.push(HostNode {
            node: host_node,
            host: h.id,
            ports,
            files,
        });
    }

    for l in &obs.links {
        let (a, b) = (
            subnets[subnet_slot[&l.a]].node,
            subnets[subnet_slot[&l.b]].node,
        );
        edges.push(Edge {
            src: a,
            dst: b,
            kind: EdgeKind::SubnetLink,
        });
        edges.push(Edge {
            src: b,
            dst: a,
            kind: EdgeKind::SubnetLink,
        });
    }

    Ok(AttributedGraph {
        agent: obs.agent,
        nodes,
        edges,
        global: build_global_context(obs),
        hosts,
        subnets,
    })
}

impl AttributedGraph {
    pub fn count(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    /// Stacks the feature vectors of the given nodes into a matrix.
    pub fn feature_matrix(&self, nodes: &[usize], width: usize) -> Tensor {
        let mut data = Vec::with_capacity(nodes.len() * width);
        for &n in nodes {
            debug_assert_eq!(self.nodes[n].features.len(), width);
            data.extend_from_slice(&self.nodes[n].features);
        }
        Tensor::new(&[nodes.len(), width], data).expect("feature widths are fixed")
    }

    pub fn host_position(&self, host: HostId) -> Option<usize> {
        self.hosts.iter().position(|h| h.host == host)
    }

    pub fn subnet_position(&self, subnet: SubnetId) -> Option<usize> {
        self.subnets.iter().position(|s| s.subnet == subnet)
    }

    /// Writes one JSON line per node, then one per edge.
    pub fn dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct NodeLine<'a> {
            record: &'static str,
            index: usize,
            kind: NodeKind,
            entity: usize,
            features: &'a [f64],
        }
        #[derive(Serialize)]
        struct EdgeLine {
            record: &'static str,
            src: usize,
            dst: usize,
            kind: EdgeKind,
        }
        for (index, n) in self.nodes.iter().enumerate() {
            let line = NodeLine {
                record: "node",
                index,
                kind: n.kind,
                entity: n.entity,
                features: &n.features,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        for e in &self.edges {
            let line = EdgeLine {
                record: "edge",
                src: e.src,
                dst: e.dst,
                kind: e.kind,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Template {
    Sleep,
    Analyze,
    Restore,
    DeployDecoy,
    BlockTraffic,
    AllowTraffic,
}

impl Template {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CatalogEntry {
    pub template: Template,
    pub command: ActionKind,
}

/// Canonically ordered action list with its legality mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionCatalog {
    pub agent: AgentId,
    pub entries: Vec<CatalogEntry>,
    pub mask: Vec<bool>,
}

impl ActionCatalog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn legal_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn index_of(&self, command: &ActionKind) -> Option<usize> {
        self.entries.iter().position(|e| e.command == *command)
    }
}

pub fn enumerate_actions(graph: &AttributedGraph, obs: &LocalObservation) -> ActionCatalog {
    let mut entries = vec![CatalogEntry {
        template: Template::Sleep,
        command: ActionKind::Sleep,
    }];
    let mut mask = vec![true];

    let mut host_keys: Vec<(SubnetId, HostId)> = graph
        .hosts
        .iter()
        .map(|h| {
            let subnet = obs.hosts.iter().find(|o| o.id == h.host).map(|o| o.subnet);
            (subnet.expect("graph built from this observation"), h.host)
        })
        .collect();
    host_keys.sort_unstable();
    for (_, h) in host_keys {
        for (template, command) in [
            (Template::Analyze, ActionKind::Analyze(h)),
            (Template::Restore, ActionKind::Restore(h)),
            (Template::DeployDecoy, ActionKind::DeployDecoy(h)),
        ] {
            entries.push(CatalogEntry { template, command });
            mask.push(true);
        }
    }

    let mut pairs: Vec<_> = obs
        .links
        .iter()
        .map(|l| (l.a.min(l.b), l.a.max(l.b), l.blocked))
        .collect();
    pairs.sort_unstable_by_key(|p| (p.0, p.1));
    for (a, b, blocked) in pairs {
        entries.push(CatalogEntry {
            template: Template::BlockTraffic,
            command: ActionKind::BlockTraffic(a, b),
        });
        mask.push(!blocked);
        entries.push(CatalogEntry {
            template: Template::AllowTraffic,
            command: ActionKind::AllowTraffic(a, b),
        });
        mask.push(blocked);
    }
    ActionCatalog {
        agent: graph.agent,
        entries,
        mask,
    }
}

pub fn action_to_command(index: usize, catalog: &ActionCatalog) -> Result<BlueAction, GraphError> {
    let entry = catalog.entries.get(index).ok_or(GraphError::Index {
        index,
        len: catalog.len(),
    })?;
    if !catalog.mask[index] {
        return Err(GraphError::Masked(index));
    }
    Ok(BlueAction::new(catalog.agent, entry.command))
}

/// Per-entry input rows for the action encoder: template one-hot, target
/// host features, a summary of its analysed files, the mean features of the
/// two link endpoints, and the link's blocked flag.
pub fn action_features(graph: &AttributedGraph, catalog: &ActionCatalog) -> Tensor {
    let mut data = Vec::with_capacity(catalog.len() * ACTION_FEATS);
    for (i, e) in catalog.entries.iter().enumerate() {
        let start = data.len();
        one_hot(&mut data, TEMPLATES, e.template.index());
        let host = match e.command {
            ActionKind::Analyze(h) | ActionKind::Restore(h) | ActionKind::DeployDecoy(h) => {
                graph.host_position(h)
            }
            _ => None,
        };
        match host {
            Some(pos) => {
                let hn = &graph.hosts[pos];
                data.extend_from_slice(&graph.nodes[hn.node].features);
                let max_density = hn
                    .files
                    .iter()
                    .map(|&f| graph.nodes[f].features[0])
                    .fold(0.0, f64::max);
                data.push((hn.files.len() as f64 / 2.0).min(1.0));
                data.push(max_density);
            }
            None => data.extend(std::iter::repeat_n(0.0, HOST_FEATS + 2)),
        }
        match e.command {
            ActionKind::BlockTraffic(a, b) | ActionKind::AllowTraffic(a, b) => {
                let fa =
                    &graph.nodes[graph.subnets[graph.subnet_position(a).unwrap()].node].features;
                let fb =
                    &graph.nodes[graph.subnets[graph.subnet_position(b).unwrap()].node].features;
                data.extend(fa.iter().zip(fb).map(|(x, y)| 0.5 * (x + y)));
                // Block is legal exactly when the link is open.
                let blocked = (e.template == Template::BlockTraffic) != catalog.mask[i];
                data.push(flag(blocked));
            }
            _ => data.extend(std::iter::repeat_n(0.0, SUBNET_FEATS + 1)),
        }
        debug_assert_eq!(data.len() - start, ACTION_FEATS);
    }
    Tensor::new(&[catalog.len(), ACTION_FEATS], data).expect("fixed action width")
}

/// Decoded content of one outgoing message byte.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MessageSummary {
    /// Suspected compromise per owned subnet, in ascending subnet order.
    pub suspected: [bool; 4],
    pub restored: bool,
    pub decoy_triggered: bool,
    /// Alerted hosts; encoded clipped to 3.
    pub alerted_hosts: usize,
}

impl MessageSummary {
    /// Summarises what the agent saw this step and whether it is restoring.
    pub fn from_observation(
        obs: &LocalObservation,
        memory: &AgentMemory,
        action: &ActionKind,
    ) -> Self {
        let mut m = MessageSummary::default();
        for (slot, &s) in obs.subnets.iter().take(4).enumerate() {
            m.suspected[slot] = obs.hosts.iter().filter(|h| h.subnet == s).any(|h| {
                h.alerts.any()
                    || memory
                        .files
                        .get(&h.id)
                        .is_some_and(|fs| fs.iter().any(|f| f.density > 0.5 && !f.signed))
            });
        }
        m.restored = matches!(action, ActionKind::Restore(_));
        m.decoy_triggered = obs.hosts.iter().any(|h| h.alerts.decoy_triggered);
        m.alerted_hosts = obs.hosts.iter().filter(|h| h.alerts.any()).count();
        m
    }
}

pub fn encode_outgoing_message(m: &MessageSummary) -> u8 {
    let mut byte = 0u8;
    for (i, &s) in m.suspected.iter().enumerate() {
        byte |= (s as u8) << i;
    }
    byte |= (m.restored as u8) << 4;
    byte |= (m.decoy_triggered as u8) << 5;
    byte |= (m.alerted_hosts.min(3) as u8) << 6;
    byte
}

pub fn decode_message(byte: u8) -> MessageSummary {
    let mut suspected = [false; 4];
    for (i, s) in suspected.iter_mut().enumerate() {
        *s = byte & (1 << i) != 0;
    }
    MessageSummary {
        suspected,
        restored: byte & (1 << 4) != 0,
        decoy_triggered: byte & (1 << 5) != 0,
        alerted_hosts: (byte >> 6) as usize,
    }
}
