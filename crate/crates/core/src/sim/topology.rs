use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rng::{stream, Purpose};
use super::{AgentId, HostId, SimConfig, SimError, SubnetId};

pub const ZONES: usize = 4;
pub const NUM_AGENTS: usize = 5;
pub const OS_TAGS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ServiceKind {
    Ssh,
    Http,
    Https,
    Smb,
    Rdp,
    Mysql,
    Smtp,
    Ftp,
}

impl ServiceKind {
    pub const ALL: [ServiceKind; 8] = [
        ServiceKind::Ssh,
        ServiceKind::Http,
        ServiceKind::Https,
        ServiceKind::Smb,
        ServiceKind::Rdp,
        ServiceKind::Mysql,
        ServiceKind::Smtp,
        ServiceKind::Ftp,
    ];

    pub fn default_port(self) -> u16 {
        match self {
            ServiceKind::Ssh => 22,
            ServiceKind::Http => 80,
            ServiceKind::Https => 443,
            ServiceKind::Smb => 445,
            ServiceKind::Rdp => 3389,
            ServiceKind::Mysql => 3306,
            ServiceKind::Smtp => 25,
            ServiceKind::Ftp => 21,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Service {
    pub port: u16,
    pub kind: ServiceKind,
}

impl Service {
    pub fn is_default_port(&self) -> bool {
        self.port == self.kind.default_port()
    }

    pub fn is_ephemeral(&self) -> bool {
        self.port >= 49152
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HostRole {
    Workstation,
    Server,
    OperationalServer,
}

impl HostRole {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// A file present on a host. `malicious` is ground truth and never leaves
/// the simulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub density: f64,
    pub signed: bool,
    pub malicious: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HostSpec {
    pub id: HostId,
    pub subnet: SubnetId,
    pub role: HostRole,
    pub os: usize,
    pub services: Vec<Service>,
    pub files: Vec<FileRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subnet {
    pub id: SubnetId,
    /// `None` for backbone router subnets.
    pub zone: Option<usize>,
    pub owner: AgentId,
    pub hosts: Vec<HostId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub subnets: Vec<Subnet>,
    pub hosts: Vec<HostSpec>,
    /// Undirected subnet adjacency as `(low, high)` pairs.
    pub links: BTreeSet<(SubnetId, SubnetId)>,
    pub agent_subnets: Vec<Vec<SubnetId>>,
}

pub fn link_key(a: SubnetId, b: SubnetId) -> (SubnetId, SubnetId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Topology {
    pub fn num_agents(&self) -> usize {
        self.agent_subnets.len()
    }

    pub fn owner_of_host(&self, h: HostId) -> AgentId {
        self.subnets[self.hosts[h].subnet].owner
    }

    pub fn is_link(&self, a: SubnetId, b: SubnetId) -> bool {
        a != b && self.links.contains(&link_key(a, b))
    }

    pub fn neighbors(&self, s: SubnetId) -> Vec<SubnetId> {
        let mut out: Vec<SubnetId> = self
            .links
            .iter()
            .filter_map(|&(a, b)| {
                if a == s {
                    Some(b)
                } else if b == s {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Links with at least one endpoint owned by `agent`, in sorted order.
    pub fn agent_links(&self, agent: AgentId) -> Vec<(SubnetId, SubnetId)> {
        self.links
            .iter()
            .copied()
            .filter(|&(a, b)| self.subnets[a].owner == agent || self.subnets[b].owner == agent)
            .collect()
    }

    pub fn agent_hosts(&self, agent: AgentId) -> Vec<HostId> {
        self.agent_subnets[agent]
            .iter()
            .flat_map(|s| self.subnets[*s].hosts.iter().copied())
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        if self.subnets.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.subnets.len()];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(s) = queue.pop_front() {
            for n in self.neighbors(s) {
                if !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        seen.into_iter().all(|v| v)
    }
}

/// Samples a topology. Zones 0-3 each get one defender; the backbone
/// subnets belong to defender 4.
pub fn generate_topology(seed: u64, config: &SimConfig) -> Result<Topology, SimError> {
    config.validate()?;
    let mut rng = stream(seed, 0, 0, Purpose::Topology);
    let mut subnets = Vec::new();
    let mut agent_subnets = vec![Vec::new(); NUM_AGENTS];

    let mut zone_subnets = Vec::new();
    for zone in 0..ZONES {
        let count = rng.gen_range(config.subnets_per_zone_min..=config.subnets_per_zone_max);
        let mut ids = Vec::new();
        for _ in 0..count {
            let id = subnets.len();
            subnets.push(Subnet {
                id,
                zone: Some(zone),
                owner: zone,
                hosts: Vec::new(),
            });
            agent_subnets[zone].push(id);
            ids.push(id);
        }
        zone_subnets.push(ids);
    }
    let mut routers = Vec::new();
    for _ in 0..config.router_subnets {
        let id = subnets.len();
        subnets.push(Subnet {
            id,
            zone: None,
            owner: ZONES,
            hosts: Vec::new(),
        });
        agent_subnets[ZONES].push(id);
        routers.push(id);
    }

    let mut links = BTreeSet::new();
    for (zone, ids) in zone_subnets.iter().enumerate() {
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                links.insert(link_key(a, b));
            }
            links.insert(link_key(a, routers[(zone + i) % routers.len()]));
        }
    }
    for w in routers.windows(2) {
        links.insert(link_key(w[0], w[1]));
    }

    let mut hosts = Vec::new();
    for subnet in subnets.iter_mut() {
        let count = rng.gen_range(config.hosts_min..=config.hosts_max);
        for i in 0..count {
            let id = hosts.len();
            let role = match i {
                0 if rng.gen_bool(0.5) => HostRole::OperationalServer,
                0 => HostRole::Server,
                1 if rng.gen_bool(0.3) => HostRole::Server,
                _ => HostRole::Workstation,
            };
            let os = rng.gen_range(0..OS_TAGS);
            let n_services = rng.gen_range(config.services_min..=config.services_max);
            let mut kinds = ServiceKind::ALL.to_vec();
            kinds.shuffle(&mut rng);
            let mut services: Vec<Service> = Vec::with_capacity(n_services);
            for kind in kinds.into_iter().take(n_services) {
                let mut port = if rng.gen_bool(0.8) {
                    kind.default_port()
                } else {
                    rng.gen_range(49152..=65535u16)
                };
                while services.iter().any(|s| s.port == port) {
                    port = rng.gen_range(49152..=65535u16);
                }
                services.push(Service { port, kind });
            }
            services.sort();
            let n_files = rng.gen_range(0..=2);
            let files = (0..n_files)
                .map(|_| FileRecord {
                    density: rng.gen_range(0.0..0.5),
                    signed: rng.gen_bool(0.8),
                    malicious: false,
                })
                .collect();
            hosts.push(HostSpec {
                id,
                subnet: subnet.id,
                role,
                os,
                services,
                files,
            });
            subnet.hosts.push(id);
        }
    }

    let topo = Topology {
        subnets,
        hosts,
        links,
        agent_subnets,
    };
    debug_assert!(topo.is_connected());
    Ok(topo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_topology() {
        let c = SimConfig::default();
        assert_eq!(
            generate_topology(7, &c).unwrap(),
            generate_topology(7, &c).unwrap()
        );
        assert_ne!(
            generate_topology(7, &c).unwrap(),
            generate_topology(8, &c).unwrap()
        );
    }

    #[test]
    fn degenerate_host_bounds() {
        let c = SimConfig {
            hosts_min: 5,
            hosts_max: 5,
            ..Default::default()
        };
        let t = generate_topology(1, &c).unwrap();
        assert!(t.subnets.iter().all(|s| s.hosts.len() == 5));
    }

    #[test]
    fn invalid_bounds_rejected() {
        let c = SimConfig {
            hosts_min: 9,
            hosts_max: 5,
            ..Default::default()
        };
        assert!(matches!(generate_topology(1, &c), Err(SimError::Config(_))));
    }

    #[test]
    fn bounds_connectivity_and_ownership_hold() {
        let c = SimConfig::default();
        for seed in 0..1000 {
            let t = generate_topology(seed, &c).unwrap();
            assert!(t.is_connected());
            for s in &t.subnets {
                assert!((5..=15).contains(&s.hosts.len()));
                let owners = t.agent_subnets.iter().filter(|v| v.contains(&s.id)).count();
                assert_eq!(owners, 1);
            }
            for h in &t.hosts {
                assert!((1..=5).contains(&h.services.len()));
                let mut ports: Vec<u16> = h.services.iter().map(|s| s.port).collect();
                ports.dedup();
                assert_eq!(ports.len(), h.services.len());
            }
            assert_eq!(t.num_agents(), 5);
            let zone0_workstations = t
                .subnets
                .iter()
                .filter(|s| s.zone == Some(0))
                .flat_map(|s| s.hosts.iter())
                .filter(|h| t.hosts[**h].role == HostRole::Workstation)
                .count();
            assert!(zone0_workstations > 0);
        }
    }
}
