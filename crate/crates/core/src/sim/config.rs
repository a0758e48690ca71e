use serde::{Deserialize, Serialize};

use super::SimError;

/// Per-step reward constants. Each entry is charged once per occurrence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardTable {
    pub user_access: f64,
    pub root_access: f64,
    pub impact: f64,
    pub restore: f64,
    pub green_remote_blocked: f64,
    pub green_local_failed: f64,
    pub analyze: f64,
}

impl Default for RewardTable {
    fn default() -> Self {
        RewardTable {
            user_access: -0.1,
            root_access: -0.3,
            impact: -2.0,
            restore: -1.0,
            green_remote_blocked: -0.1,
            green_local_failed: -0.2,
            analyze: -0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub subnets_per_zone_min: usize,
    pub subnets_per_zone_max: usize,
    /// Backbone subnets owned by the fifth defender.
    pub router_subnets: usize,
    pub hosts_min: usize,
    pub hosts_max: usize,
    pub services_min: usize,
    pub services_max: usize,
    pub horizon: usize,
    pub p_detect: f64,
    pub p_false: f64,
    pub p_discover: f64,
    pub p_scan: f64,
    pub p_exploit: f64,
    pub p_escalate: f64,
    /// Step at which the attacker lands its first foothold.
    pub red_entry_step: usize,
    /// Per-step chance of a fresh foothold after the attacker was evicted.
    pub p_reentry: f64,
    pub max_decoys: usize,
    pub green_remote_prob: f64,
    pub rewards: RewardTable,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            subnets_per_zone_min: 2,
            subnets_per_zone_max: 2,
            router_subnets: 2,
            hosts_min: 5,
            hosts_max: 15,
            services_min: 1,
            services_max: 5,
            horizon: 500,
            p_detect: 0.9,
            p_false: 0.02,
            p_discover: 0.8,
            p_scan: 0.75,
            p_exploit: 0.6,
            p_escalate: 0.5,
            red_entry_step: 1,
            p_reentry: 0.1,
            max_decoys: 2,
            green_remote_prob: 0.5,
            rewards: RewardTable::default(),
        }
    }
}

impl SimConfig {
    /// Desk-scale training environment: two subnets per defender and a
    /// 100-step horizon.
    pub fn desk() -> Self {
        SimConfig {
            horizon: 100,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::Config(msg));
        if self.subnets_per_zone_min == 0 || self.subnets_per_zone_min > self.subnets_per_zone_max {
            return bad(format!(
                "subnets per zone bounds [{}, {}]",
                self.subnets_per_zone_min, self.subnets_per_zone_max
            ));
        }
        if self.subnets_per_zone_max > 4 {
            return bad("at most 4 subnets per zone fit in a message bitfield".into());
        }
        if self.router_subnets == 0 || self.router_subnets > 4 {
            return bad(format!(
                "router subnets {} not in [1, 4]",
                self.router_subnets
            ));
        }
        if self.hosts_min < 3 || self.hosts_min > self.hosts_max {
            return bad(format!(
                "host bounds [{}, {}]",
                self.hosts_min, self.hosts_max
            ));
        }
        if self.services_min == 0 || self.services_min > self.services_max || self.services_max > 8
        {
            return bad(format!(
                "service bounds [{}, {}]",
                self.services_min, self.services_max
            ));
        }
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        for (name, p) in [
            ("p_detect", self.p_detect),
            ("p_false", self.p_false),
            ("p_discover", self.p_discover),
            ("p_scan", self.p_scan),
            ("p_exploit", self.p_exploit),
            ("p_escalate", self.p_escalate),
            ("p_reentry", self.p_reentry),
            ("green_remote_prob", self.green_remote_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        Ok(())
    }
}
