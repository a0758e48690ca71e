use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rng::{stream, Purpose};
use super::topology::{
    generate_topology, link_key, FileRecord, HostRole, Service, ServiceKind, Topology,
};
use super::{AgentId, HostId, RewardTable, SimConfig, SimError, SubnetId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Compromise {
    Clean,
    UserAccess,
    RootAccess,
}

/// Attacker knowledge of a host. Ordered; only a restore moves it backwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RedPhase {
    Unknown,
    Discovered,
    Scanned,
    Exploited,
    Escalated,
    Impacting,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HostState {
    pub compromise: Compromise,
    pub decoys: Vec<Service>,
    pub files: Vec<FileRecord>,
    pub last_compromise_step: Option<usize>,
    pub last_restore_step: Option<usize>,
    pub role: HostRole,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RedState {
    pub phase: Vec<RedPhase>,
    pub footholds: BTreeSet<HostId>,
    /// Whether the first foothold has been placed.
    pub entered: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    Sleep,
    Analyze(HostId),
    Restore(HostId),
    DeployDecoy(HostId),
    BlockTraffic(SubnetId, SubnetId),
    AllowTraffic(SubnetId, SubnetId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlueAction {
    pub agent: AgentId,
    pub kind: ActionKind,
}

impl BlueAction {
    pub fn new(agent: AgentId, kind: ActionKind) -> Self {
        BlueAction { agent, kind }
    }

    pub fn sleep(agent: AgentId) -> Self {
        BlueAction::new(agent, ActionKind::Sleep)
    }
}

/// One inter-agent message byte.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message(pub u8);

impl TryFrom<i64> for Message {
    type Error = SimError;

    fn try_from(v: i64) -> Result<Self, SimError> {
        u8::try_from(v)
            .map(Message)
            .map_err(|_| SimError::MessageRange(v))
    }
}

/// Broadcast: agent `i` receives every other agent's byte in ascending
/// sender order. Missing senders read as zero.
pub fn deliver_messages(outbox: &[Message], num_agents: usize) -> Vec<[u8; 4]> {
    (0..num_agents)
        .map(|me| {
            let mut inbox = [0u8; 4];
            let others = (0..num_agents).filter(|&a| a != me);
            for (slot, sender) in others.take(4).enumerate() {
                inbox[slot] = outbox.get(sender).map_or(0, |m| m.0);
            }
            inbox
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alerts {
    pub scan_detected: bool,
    pub exploit_detected: bool,
    pub decoy_triggered: bool,
}

impl Alerts {
    pub fn any(&self) -> bool {
        self.scan_detected || self.exploit_detected || self.decoy_triggered
    }
}

/// Ground-truth attacker activity on a host during one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Activity {
    pub scan: bool,
    pub exploit: bool,
    pub decoy: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedFile {
    pub density: f64,
    pub signed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedHost {
    pub id: HostId,
    pub subnet: SubnetId,
    pub role: HostRole,
    pub os: usize,
    pub services: Vec<Service>,
    pub decoys: Vec<Service>,
    pub alerts: Alerts,
    /// Present only on the step after an Analyze of this host.
    pub analysis: Option<Vec<ObservedFile>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkView {
    pub a: SubnetId,
    pub b: SubnetId,
    pub blocked: bool,
    pub owner_a: AgentId,
    pub owner_b: AgentId,
}

/// What one defender sees. Carries no compromise state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalObservation {
    pub agent: AgentId,
    pub timestep: usize,
    pub horizon: usize,
    pub phase: u8,
    pub subnets: Vec<SubnetId>,
    pub hosts: Vec<ObservedHost>,
    pub links: Vec<LinkView>,
    pub inbox: [u8; 4],
    pub inbox_from: [AgentId; 4],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RedActionKind {
    Entry,
    Discover,
    Scan,
    Exploit,
    Escalate,
    Impact,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedEvent {
    pub source: Option<HostId>,
    pub target: HostId,
    pub kind: RedActionKind,
    pub success: bool,
    pub decoy: bool,
}

/// Occurrence counts for every reward-table entry.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardLedger {
    pub user_access_hosts: u32,
    pub root_access_hosts: u32,
    pub impacts: u32,
    pub restores: u32,
    pub analyzes: u32,
    pub green_remote_blocked: u32,
    pub green_local_failed: u32,
}

impl RewardLedger {
    pub const COMPONENTS: [&'static str; 7] = [
        "user_access",
        "root_access",
        "impact",
        "restore",
        "analyze",
        "green_remote_blocked",
        "green_local_failed",
    ];

    pub fn components(&self, table: &RewardTable) -> [f64; 7] {
        [
            self.user_access_hosts as f64 * table.user_access,
            self.root_access_hosts as f64 * table.root_access,
            self.impacts as f64 * table.impact,
            self.restores as f64 * table.restore,
            self.analyzes as f64 * table.analyze,
            self.green_remote_blocked as f64 * table.green_remote_blocked,
            self.green_local_failed as f64 * table.green_local_failed,
        ]
    }

    pub fn total(&self, table: &RewardTable) -> f64 {
        self.components(table).iter().sum()
    }

    pub fn merge(&mut self, o: &RewardLedger) {
        self.user_access_hosts += o.user_access_hosts;
        self.root_access_hosts += o.root_access_hosts;
        self.impacts += o.impacts;
        self.restores += o.restores;
        self.analyzes += o.analyzes;
        self.green_remote_blocked += o.green_remote_blocked;
        self.green_local_failed += o.green_local_failed;
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestoreRecord {
    pub agent: AgentId,
    pub host: HostId,
    pub was_compromised: bool,
}

/// Ground truth at the end of a step, for metrics only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSnapshot {
    pub compromise: Vec<Compromise>,
    pub phase: Vec<RedPhase>,
    pub blocked_links: Vec<(SubnetId, SubnetId)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    /// Index of the step that was executed.
    pub step: usize,
    pub actions: Vec<BlueAction>,
    /// `true` where the submitted action was out of scope and ran as Sleep.
    pub rejected: Vec<bool>,
    pub observations: Vec<LocalObservation>,
    pub agent_rewards: Vec<f64>,
    pub reward: f64,
    pub ledger: RewardLedger,
    pub agent_ledgers: Vec<RewardLedger>,
    pub red_events: Vec<RedEvent>,
    pub restores: Vec<RestoreRecord>,
    /// Hosts that went from Clean to compromised this step.
    pub new_compromises: Vec<HostId>,
    pub done: bool,
    pub truth: TruthSnapshot,
}

/// Full simulator state for one episode.
#[derive(Clone, Debug)]
pub struct CyberEnv {
    config: SimConfig,
    seed: u64,
    topology: Topology,
    hosts: Vec<HostState>,
    red: RedState,
    blocked: BTreeMap<(SubnetId, SubnetId), bool>,
    t: usize,
    alerts: Vec<Alerts>,
    analysis: BTreeMap<HostId, Vec<ObservedFile>>,
    inbox: Vec<[u8; 4]>,
    outbox: Vec<Message>,
    /// Red activity of the step just executed, exposed for tests.
    last_activity: Vec<Activity>,
}

impl CyberEnv {
    pub fn new(config: SimConfig, seed: u64) -> Result<Self, SimError> {
        let topology = generate_topology(seed, &config)?;
        Ok(Self::with_topology(config, seed, topology))
    }

    pub fn with_topology(config: SimConfig, seed: u64, topology: Topology) -> Self {
        let hosts = topology
            .hosts
            .iter()
            .map(|h| HostState {
                compromise: Compromise::Clean,
                decoys: Vec::new(),
                files: h.files.clone(),
                last_compromise_step: None,
                last_restore_step: None,
                role: h.role,
            })
            .collect::<Vec<_>>();
        let n = hosts.len();
        let blocked = topology.links.iter().map(|l| (*l, false)).collect();
        let agents = topology.num_agents();
        CyberEnv {
            config,
            seed,
            topology,
            hosts,
            red: RedState {
                phase: vec![RedPhase::Unknown; n],
                footholds: BTreeSet::new(),
                entered: false,
            },
            blocked,
            t: 0,
            alerts: vec![Alerts::default(); n],
            analysis: BTreeMap::new(),
            inbox: vec![[0; 4]; agents],
            outbox: Vec::new(),
            last_activity: vec![Activity::default(); n],
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn host(&self, h: HostId) -> &HostState {
        &self.hosts[h]
    }

    pub fn host_mut(&mut self, h: HostId) -> &mut HostState {
        &mut self.hosts[h]
    }

    pub fn red(&self) -> &RedState {
        &self.red
    }

    /// Direct attacker-state access for scenario setup in tests and demos.
    pub fn red_mut(&mut self) -> &mut RedState {
        &mut self.red
    }

    pub fn timestep(&self) -> usize {
        self.t
    }

    pub fn num_agents(&self) -> usize {
        self.topology.num_agents()
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.config.horizon
    }

    pub fn is_blocked(&self, a: SubnetId, b: SubnetId) -> bool {
        self.blocked.get(&link_key(a, b)).copied().unwrap_or(false)
    }

    /// Sets a link's traffic policy directly, for scenario setup.
    pub fn set_link_blocked(&mut self, a: SubnetId, b: SubnetId, blocked: bool) {
        if self.topology.is_link(a, b) {
            self.blocked.insert(link_key(a, b), blocked);
        }
    }

    pub fn last_activity(&self) -> &[Activity] {
        &self.last_activity
    }

    /// Queues this step's outgoing message bytes (index = sender).
    pub fn set_outbox(&mut self, outbox: &[Message]) {
        self.outbox = outbox.to_vec();
    }

    pub fn episode_phase(&self) -> u8 {
        ((3 * self.t) / self.config.horizon).min(2) as u8
    }

    fn can_reach(&self, from: SubnetId, to: SubnetId) -> bool {
        from == to || (self.topology.is_link(from, to) && !self.is_blocked(from, to))
    }

    fn in_scope(&self, action: &BlueAction) -> bool {
        let owned = |s: SubnetId| self.topology.subnets[s].owner == action.agent;
        match action.kind {
            ActionKind::Sleep => true,
            ActionKind::Analyze(h) | ActionKind::Restore(h) | ActionKind::DeployDecoy(h) => {
                h < self.hosts.len() && owned(self.topology.hosts[h].subnet)
            }
            ActionKind::BlockTraffic(a, b) | ActionKind::AllowTraffic(a, b) => {
                a < self.topology.subnets.len()
                    && b < self.topology.subnets.len()
                    && self.topology.is_link(a, b)
                    && (owned(a) || owned(b))
            }
        }
    }

    /// Runs one step: blue actions, then the attacker, then users, then
    /// rewards and observations.
    pub fn step(&mut self, actions: &[BlueAction]) -> Result<StepResult, SimError> {
        if self.is_done() {
            return Err(SimError::Done);
        }
        let agents = self.num_agents();
        if actions.len() != agents {
            return Err(SimError::ActionCount {
                expected: agents,
                got: actions.len(),
            });
        }
        let t = self.t;
        let n = self.hosts.len();
        let mut agent_ledgers = vec![RewardLedger::default(); agents];
        let mut rejected = vec![false; agents];
        let mut applied = Vec::with_capacity(agents);
        let mut restores = Vec::new();
        self.analysis.clear();

        for (i, action) in actions.iter().enumerate() {
            let valid = action.agent == i && self.in_scope(action);
            let kind = if valid {
                action.kind
            } else {
                rejected[i] = true;
                ActionKind::Sleep
            };
            applied.push(BlueAction::new(i, kind));
            match kind {
                ActionKind::Sleep => {}
                ActionKind::Analyze(h) => {
                    agent_ledgers[i].analyzes += 1;
                    let files = self.hosts[h]
                        .files
                        .iter()
                        .map(|f| ObservedFile {
                            density: f.density,
                            signed: f.signed,
                        })
                        .collect();
                    self.analysis.insert(h, files);
                }
                ActionKind::Restore(h) => {
                    agent_ledgers[i].restores += 1;
                    let host = &mut self.hosts[h];
                    let was_compromised = host.compromise != Compromise::Clean;
                    host.compromise = Compromise::Clean;
                    host.files.retain(|f| !f.malicious);
                    host.last_restore_step = Some(t);
                    if self.red.phase[h] > RedPhase::Discovered {
                        self.red.phase[h] = RedPhase::Discovered;
                    }
                    self.red.footholds.remove(&h);
                    restores.push(RestoreRecord {
                        agent: i,
                        host: h,
                        was_compromised,
                    });
                }
                ActionKind::DeployDecoy(h) => self.deploy_decoy(h),
                ActionKind::BlockTraffic(a, b) => {
                    self.blocked.insert(link_key(a, b), true);
                }
                ActionKind::AllowTraffic(a, b) => {
                    self.blocked.insert(link_key(a, b), false);
                }
            }
        }

        let mut activity = vec![Activity::default(); n];
        let mut red_events = Vec::new();
        let mut new_compromises = Vec::new();
        self.red_step(&mut activity, &mut red_events, &mut new_compromises);
        for e in &red_events {
            if e.kind == RedActionKind::Impact && e.success {
                agent_ledgers[self.topology.owner_of_host(e.target)].impacts += 1;
            }
        }
        self.green_step(&mut agent_ledgers);

        for (h, host) in self.hosts.iter().enumerate() {
            let owner = self.topology.owner_of_host(h);
            match host.compromise {
                Compromise::Clean => {}
                Compromise::UserAccess => agent_ledgers[owner].user_access_hosts += 1,
                Compromise::RootAccess => agent_ledgers[owner].root_access_hosts += 1,
            }
        }

        // Detection uses its own stream so it never perturbs attacker draws.
        for h in 0..n {
            let mut rng = stream(self.seed, t as u64, h as u64, Purpose::Detection);
            let (r_scan, r_exploit): (f64, f64) = (rng.gen(), rng.gen());
            let a = activity[h];
            let threshold = |active: bool| {
                if active {
                    self.config.p_detect
                } else {
                    self.config.p_false
                }
            };
            self.alerts[h] = Alerts {
                scan_detected: r_scan < threshold(a.scan),
                exploit_detected: r_exploit < threshold(a.exploit),
                decoy_triggered: a.decoy,
            };
        }
        self.last_activity = activity;

        self.inbox = deliver_messages(&self.outbox, agents);
        self.outbox.clear();
        self.t += 1;

        let table = &self.config.rewards;
        let mut ledger = RewardLedger::default();
        for l in &agent_ledgers {
            ledger.merge(l);
        }
        let agent_rewards = agent_ledgers.iter().map(|l| l.total(table)).collect();
        let reward = ledger.total(table);
        let observations = (0..agents).map(|a| self.observe_unchecked(a)).collect();
        Ok(StepResult {
            step: t,
            actions: applied,
            rejected,
            observations,
            agent_rewards,
            reward,
            ledger,
            agent_ledgers,
            red_events,
            restores,
            new_compromises,
            done: self.is_done(),
            truth: self.truth(),
        })
    }

    pub fn truth(&self) -> TruthSnapshot {
        TruthSnapshot {
            compromise: self.hosts.iter().map(|h| h.compromise).collect(),
            phase: self.red.phase.clone(),
            blocked_links: self
                .blocked
                .iter()
                .filter(|(_, b)| **b)
                .map(|(l, _)| *l)
                .collect(),
        }
    }

    fn deploy_decoy(&mut self, h: HostId) {
        if self.hosts[h].decoys.len() >= self.config.max_decoys {
            return;
        }
        let mut rng = stream(self.seed, self.t as u64, h as u64, Purpose::Decoy);
        let spec = &self.topology.hosts[h];
        let used: BTreeSet<u16> = spec
            .services
            .iter()
            .chain(&self.hosts[h].decoys)
            .map(|s| s.port)
            .collect();
        let mut port = rng.gen_range(49152..=65535u16);
        while used.contains(&port) {
            port = rng.gen_range(49152..=65535u16);
        }
        let kind = ServiceKind::ALL[rng.gen_range(0..ServiceKind::ALL.len())];
        self.hosts[h].decoys.push(Service { port, kind });
    }

    fn compromise_host(&mut self, h: HostId, new_compromises: &mut Vec<HostId>) {
        let t = self.t;
        let host = &mut self.hosts[h];
        if host.compromise == Compromise::Clean {
            host.compromise = Compromise::UserAccess;
            new_compromises.push(h);
        }
        host.last_compromise_step = Some(t);
        let mut rng = stream(self.seed, t as u64, h as u64, Purpose::Implant);
        host.files.push(FileRecord {
            density: rng.gen_range(0.7..1.0),
            signed: false,
            malicious: true,
        });
        self.red.phase[h] = self.red.phase[h].max(RedPhase::Exploited);
        self.red.footholds.insert(h);
    }

    /// Attacker phase: at most one action per foothold that existed at the
    /// start of the step.
    fn red_step(
        &mut self,
        activity: &mut [Activity],
        events: &mut Vec<RedEvent>,
        new_compromises: &mut Vec<HostId>,
    ) {
        let t = self.t;
        if self.red.footholds.is_empty() {
            let enter = if !self.red.entered {
                t >= self.config.red_entry_step
            } else {
                stream(self.seed, t as u64, 0, Purpose::Entry).gen_bool(self.config.p_reentry)
            };
            if enter {
                let candidates: Vec<HostId> = self
                    .topology
                    .subnets
                    .iter()
                    .filter(|s| s.zone == Some(0))
                    .flat_map(|s| s.hosts.iter().copied())
                    .filter(|&h| {
                        self.topology.hosts[h].role == HostRole::Workstation
                            && self.hosts[h].compromise == Compromise::Clean
                    })
                    .collect();
                if !candidates.is_empty() {
                    let mut rng = stream(self.seed, t as u64, 1, Purpose::Entry);
                    let h = candidates[rng.gen_range(0..candidates.len())];
                    self.red.entered = true;
                    self.compromise_host(h, new_compromises);
                    activity[h].exploit = true;
                    events.push(RedEvent {
                        source: None,
                        target: h,
                        kind: RedActionKind::Entry,
                        success: true,
                        decoy: false,
                    });
                }
            }
            return;
        }

        let footholds: Vec<HostId> = self.red.footholds.iter().copied().collect();
        for f in footholds {
            let mut rng = stream(self.seed, t as u64, f as u64, Purpose::Red);
            let options = self.red_options(f);
            if options.is_empty() {
                continue;
            }
            let (kind, target) = options[rng.gen_range(0..options.len())];
            let roll: f64 = rng.gen();
            let mut event = RedEvent {
                source: Some(f),
                target,
                kind,
                success: false,
                decoy: false,
            };
            match kind {
                RedActionKind::Discover => {
                    // `target` is a subnet id here; pick one unknown host in it.
                    let unknown: Vec<HostId> = self.topology.subnets[target]
                        .hosts
                        .iter()
                        .copied()
                        .filter(|&h| self.red.phase[h] == RedPhase::Unknown)
                        .collect();
                    let h = unknown[rng.gen_range(0..unknown.len())];
                    event.target = h;
                    if roll < self.config.p_discover {
                        self.red.phase[h] = RedPhase::Discovered;
                        event.success = true;
                    }
                }
                RedActionKind::Scan => {
                    activity[target].scan = true;
                    if roll < self.config.p_scan {
                        self.red.phase[target] = RedPhase::Scanned;
                        event.success = true;
                    }
                }
                RedActionKind::Exploit => {
                    let decoys = self.hosts[target].decoys.len();
                    let real = self.topology.hosts[target].services.len();
                    let pick = rng.gen_range(0..decoys + real);
                    if pick < decoys {
                        activity[target].decoy = true;
                        event.decoy = true;
                    } else {
                        activity[target].exploit = true;
                        if roll < self.config.p_exploit {
                            self.compromise_host(target, new_compromises);
                            event.success = true;
                        }
                    }
                }
                RedActionKind::Escalate => {
                    activity[target].exploit = true;
                    if roll < self.config.p_escalate {
                        self.red.phase[target] = RedPhase::Escalated;
                        self.hosts[target].compromise = Compromise::RootAccess;
                        event.success = true;
                    }
                }
                RedActionKind::Impact => {
                    activity[target].exploit = true;
                    self.red.phase[target] = RedPhase::Impacting;
                    event.success = true;
                }
                RedActionKind::Entry => unreachable!(),
            }
            events.push(event);
        }
    }

    /// Eligible attacker moves from foothold `f`, in a fixed order. For
    /// Discover the target is a subnet id, otherwise a host id.
    fn red_options(&self, f: HostId) -> Vec<(RedActionKind, usize)> {
        let home = self.topology.hosts[f].subnet;
        let mut reachable = vec![home];
        reachable.extend(
            self.topology
                .neighbors(home)
                .into_iter()
                .filter(|&s| self.can_reach(home, s)),
        );
        let mut out = Vec::new();
        for &s in &reachable {
            if self.topology.subnets[s]
                .hosts
                .iter()
                .any(|&h| self.red.phase[h] == RedPhase::Unknown)
            {
                out.push((RedActionKind::Discover, s));
            }
        }
        for &s in &reachable {
            for &h in &self.topology.subnets[s].hosts {
                match self.red.phase[h] {
                    RedPhase::Discovered => out.push((RedActionKind::Scan, h)),
                    RedPhase::Scanned => out.push((RedActionKind::Exploit, h)),
                    _ => {}
                }
            }
        }
        match self.red.phase[f] {
            RedPhase::Exploited => out.push((RedActionKind::Escalate, f)),
            RedPhase::Escalated | RedPhase::Impacting
                if self.topology.hosts[f].role == HostRole::OperationalServer =>
            {
                out.push((RedActionKind::Impact, f))
            }
            _ => {}
        }
        out
    }

    /// User activity: every workstation runs one local or remote task.
    fn green_step(&mut self, ledgers: &mut [RewardLedger]) {
        let t = self.t as u64;
        for h in 0..self.hosts.len() {
            if self.topology.hosts[h].role != HostRole::Workstation {
                continue;
            }
            let owner = self.topology.owner_of_host(h);
            let mut rng = stream(self.seed, t, h as u64, Purpose::Green);
            let subnet = self.topology.hosts[h].subnet;
            let neighbors = self.topology.neighbors(subnet);
            let remote = !neighbors.is_empty() && rng.gen_bool(self.config.green_remote_prob);
            if remote {
                let target = neighbors[rng.gen_range(0..neighbors.len())];
                if self.is_blocked(subnet, target) {
                    ledgers[owner].green_remote_blocked += 1;
                }
            } else if self.hosts[h].compromise != Compromise::Clean {
                ledgers[owner].green_local_failed += 1;
            }
        }
    }

    pub fn observe(&self, agent: AgentId) -> Result<LocalObservation, SimError> {
        if agent >= self.num_agents() {
            return Err(SimError::Agent(agent));
        }
        Ok(self.observe_unchecked(agent))
    }

    fn observe_unchecked(&self, agent: AgentId) -> LocalObservation {
        let topo = &self.topology;
        let hosts = topo
            .agent_hosts(agent)
            .into_iter()
            .map(|h| {
                let spec = &topo.hosts[h];
                ObservedHost {
                    id: h,
                    subnet: spec.subnet,
                    role: spec.role,
                    os: spec.os,
                    services: spec.services.clone(),
                    decoys: self.hosts[h].decoys.clone(),
                    alerts: self.alerts[h],
                    analysis: self.analysis.get(&h).cloned(),
                }
            })
            .collect();
        let links = topo
            .agent_links(agent)
            .into_iter()
            .map(|(a, b)| LinkView {
                a,
                b,
                blocked: self.is_blocked(a, b),
                owner_a: topo.subnets[a].owner,
                owner_b: topo.subnets[b].owner,
            })
            .collect();
        let mut inbox_from = [0; 4];
        for (slot, sender) in (0..self.num_agents())
            .filter(|&a| a != agent)
            .take(4)
            .enumerate()
        {
            inbox_from[slot] = sender;
        }
        LocalObservation {
            agent,
            timestep: self.t,
            horizon: self.config.horizon,
            phase: self.episode_phase(),
            subnets: topo.agent_subnets[agent].clone(),
            hosts,
            links,
            inbox: self.inbox[agent],
            inbox_from,
        }
    }

    pub fn observe_all(&self) -> Vec<LocalObservation> {
        (0..self.num_agents())
            .map(|a| self.observe_unchecked(a))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sleep_all(n: usize) -> Vec<BlueAction> {
        (0..n).map(BlueAction::sleep).collect()
    }

    fn quiet_config() -> SimConfig {
        SimConfig {
            p_false: 0.0,
            red_entry_step: usize::MAX,
            horizon: 20,
            ..Default::default()
        }
    }

    #[test]
    fn quiescent_first_step() {
        let mut env = CyberEnv::new(quiet_config(), 3).unwrap();
        let r = env.step(&sleep_all(5)).unwrap();
        assert_eq!(r.reward, 0.0);
        assert!(r
            .observations
            .iter()
            .flat_map(|o| o.hosts.iter())
            .all(|h| !h.alerts.any()));
    }

    #[test]
    fn default_entry_leaves_step_zero_quiet() {
        let c = SimConfig {
            p_false: 0.0,
            ..Default::default()
        };
        let mut env = CyberEnv::new(c, 11).unwrap();
        let r = env.step(&sleep_all(5)).unwrap();
        assert_eq!(r.reward, 0.0);
        assert!(env.red().footholds.is_empty());
        let r = env.step(&sleep_all(5)).unwrap();
        assert_eq!(env.red().footholds.len(), 1);
        assert!(r.reward < 0.0);
    }

    fn root_host(env: &mut CyberEnv) -> HostId {
        let h = env.topology().subnets[0].hosts[2];
        env.host_mut(h).compromise = Compromise::RootAccess;
        env.host_mut(h).last_compromise_step = Some(0);
        env.red_mut().phase[h] = RedPhase::Escalated;
        env.red_mut().footholds.insert(h);
        env.red_mut().entered = true;
        h
    }

    #[test]
    fn restore_cleans_and_resets_phase() {
        let mut env = CyberEnv::new(quiet_config(), 5).unwrap();
        let h = root_host(&mut env);
        let owner = env.topology().owner_of_host(h);
        let mut actions = sleep_all(5);
        actions[owner] = BlueAction::new(owner, ActionKind::Restore(h));
        let r = env.step(&actions).unwrap();
        assert_eq!(env.host(h).compromise, Compromise::Clean);
        assert_eq!(env.red().phase[h], RedPhase::Discovered);
        assert!(!env.red().footholds.contains(&h));
        assert_eq!(r.ledger.restores, 1);
        assert_eq!(r.ledger.components(&env.config().rewards)[3], -1.0);
        assert_eq!(
            r.restores[0],
            RestoreRecord {
                agent: owner,
                host: h,
                was_compromised: true
            }
        );
    }

    #[test]
    fn out_of_scope_action_runs_as_sleep() {
        let mut env = CyberEnv::new(quiet_config(), 5).unwrap();
        let foreign = env.topology().agent_hosts(1)[0];
        let mut actions = sleep_all(5);
        actions[0] = BlueAction::new(0, ActionKind::Restore(foreign));
        let r = env.step(&actions).unwrap();
        assert!(r.rejected[0]);
        assert_eq!(r.actions[0].kind, ActionKind::Sleep);
        assert_eq!(r.ledger.restores, 0);
    }

    #[test]
    fn blocked_link_stops_lateral_movement() {
        for seed in 0..20 {
            let (mut env, f) = cornered(seed);
            let home = env.topology().hosts[f].subnet;
            let neighbors = env.topology().neighbors(home);
            for &s in &neighbors {
                env.set_link_blocked(home, s, true);
            }
            let before = env.red().clone();
            for _ in 0..10 {
                let r = env.step(&sleep_all(5)).unwrap();
                assert!(r.red_events.is_empty());
            }
            assert_eq!(env.red(), &before);
        }
    }

    #[test]
    fn one_open_link_is_the_only_way_out() {
        let (mut env, f) = cornered(1);
        let home = env.topology().hosts[f].subnet;
        let neighbors = env.topology().neighbors(home);
        let open = neighbors[0];
        for &s in &neighbors[1..] {
            env.set_link_blocked(home, s, true);
        }
        for _ in 0..10 {
            let r = env.step(&sleep_all(5)).unwrap();
            for e in r.red_events.iter().filter(|e| e.source == Some(f)) {
                let s = env.topology().hosts[e.target].subnet;
                assert!(s == open || s == home, "event crossed a blocked link");
            }
        }
    }

    #[test]
    fn exploit_success_adds_foothold() {
        let c = SimConfig {
            p_exploit: 1.0,
            ..quiet_config()
        };
        let mut env = CyberEnv::new(c, 6).unwrap();
        let f = root_host(&mut env);
        let target = lone_target(&mut env, f);
        let r = env.step(&sleep_all(5)).unwrap();
        assert_eq!(r.red_events.len(), 1);
        assert_eq!(r.red_events[0].kind, RedActionKind::Exploit);
        assert_eq!(env.red().phase[target], RedPhase::Exploited);
        assert!(env.red().footholds.contains(&target));
        assert_eq!(env.host(target).compromise, Compromise::UserAccess);
        assert_eq!(r.new_compromises, vec![target]);
    }

    #[test]
    fn decoy_absorbs_exploit() {
        let c = SimConfig {
            p_exploit: 1.0,
            ..quiet_config()
        };
        let mut hits = 0;
        for seed in 0..40 {
            let mut env = CyberEnv::new(c.clone(), seed).unwrap();
            let f = root_host(&mut env);
            let target = lone_target(&mut env, f);
            for port in [60001, 60002] {
                env.host_mut(target).decoys.push(Service {
                    port,
                    kind: ServiceKind::Ssh,
                });
            }
            let r = env.step(&sleep_all(5)).unwrap();
            let e = &r.red_events[0];
            if e.decoy {
                hits += 1;
                assert!(!e.success);
                assert_eq!(env.red().phase[target], RedPhase::Scanned);
                assert_eq!(env.host(target).compromise, Compromise::Clean);
                let owner = env.topology().owner_of_host(target);
                let seen = r.observations[owner]
                    .hosts
                    .iter()
                    .find(|h| h.id == target)
                    .unwrap();
                assert!(seen.alerts.decoy_triggered);
            }
        }
        assert!(hits > 0);
    }

    #[test]
    fn certain_detection_flags_exploit() {
        let c = SimConfig {
            p_detect: 1.0,
            ..quiet_config()
        };
        let mut env = CyberEnv::new(c, 6).unwrap();
        let f = root_host(&mut env);
        let target = lone_target(&mut env, f);
        let r = env.step(&sleep_all(5)).unwrap();
        assert!(!r.red_events[0].decoy);
        let owner = env.topology().owner_of_host(target);
        let seen = r.observations[owner]
            .hosts
            .iter()
            .find(|h| h.id == target)
            .unwrap();
        assert!(seen.alerts.exploit_detected);
    }

    /// Foothold on a workstation whose subnet-mates are all taken, so every
    /// remaining move leads through a link.
    fn cornered(seed: u64) -> (CyberEnv, HostId) {
        let mut env = CyberEnv::new(quiet_config(), seed).unwrap();
        let f = root_host(&mut env);
        let home = env.topology().hosts[f].subnet;
        for h in env.topology().subnets[home].hosts.clone() {
            env.red_mut().phase[h] = RedPhase::Escalated;
        }
        (env, f)
    }

    /// Leaves exactly one move for the attacker: exploit one scanned host
    /// next to the foothold.
    fn lone_target(env: &mut CyberEnv, f: HostId) -> HostId {
        let n = env.red().phase.len();
        env.red_mut().phase = vec![RedPhase::Escalated; n];
        let home = env.topology().hosts[f].subnet;
        let target = env.topology().subnets[home].hosts[3];
        env.red_mut().phase[target] = RedPhase::Scanned;
        target
    }
    #[test]
    fn green_penalties() {
        let mut env = CyberEnv::new(quiet_config(), 8).unwrap();
        let r = env.step(&sleep_all(5)).unwrap();
        assert_eq!(
            r.ledger.green_remote_blocked + r.ledger.green_local_failed,
            0
        );

        // compromise one workstation: its local tasks fail
        let ws = env
            .topology()
            .hosts
            .iter()
            .find(|h| h.role == HostRole::Workstation)
            .unwrap()
            .id;
        env.host_mut(ws).compromise = Compromise::UserAccess;
        let mut fails = 0;
        for _ in 0..10 {
            let r = env.step(&sleep_all(5)).unwrap();
            fails += r.ledger.green_local_failed;
            assert!(r.ledger.green_local_failed <= 1);
        }
        assert!(fails > 0);
    }

    #[test]
    fn message_broadcast_with_delay() {
        let mut env = CyberEnv::new(quiet_config(), 2).unwrap();
        let mut out = vec![Message(0); 5];
        out[0] = Message(0xFF);
        env.set_outbox(&out);
        let r = env.step(&sleep_all(5)).unwrap();
        for a in 1..5 {
            assert_eq!(r.observations[a].inbox[0], 0xFF);
            assert_eq!(r.observations[a].inbox_from[0], 0);
        }
        assert_eq!(r.observations[0].inbox, [0; 4]);
        let r = env.step(&sleep_all(5)).unwrap();
        assert!(r.observations.iter().all(|o| o.inbox == [0; 4]));
    }

    #[test]
    fn message_range_checked() {
        assert!(Message::try_from(255).is_ok());
        assert_eq!(Message::try_from(256), Err(SimError::MessageRange(256)));
        assert_eq!(Message::try_from(-1), Err(SimError::MessageRange(-1)));
    }

    #[test]
    fn wrong_action_count_rejected() {
        let mut env = CyberEnv::new(quiet_config(), 2).unwrap();
        assert!(matches!(
            env.step(&sleep_all(3)),
            Err(SimError::ActionCount { .. })
        ));
    }

    #[test]
    fn episode_ends_at_horizon() {
        let mut env = CyberEnv::new(quiet_config(), 2).unwrap();
        for i in 0..20 {
            let r = env.step(&sleep_all(5)).unwrap();
            assert_eq!(r.done, i == 19);
        }
        assert_eq!(env.step(&sleep_all(5)), Err(SimError::Done));
    }
}
