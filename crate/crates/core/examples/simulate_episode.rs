//! Runs one episode of the network-defence simulator with a scripted blue
//! team that restores any host raising an exploit alert, then prints the
//! reward ledger.
//!
//! ```text
//! cargo run --example simulate_episode -- [seed]
//! ```

use acdzero::sim::{ActionKind, BlueAction, Compromise, CyberEnv, RewardLedger, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(7);
    let sim = SimConfig {
        horizon: 100,
        ..SimConfig::desk()
    };
    let mut env = CyberEnv::new(sim, seed)?;
    println!(
        "seed {seed}: {} subnets, {} hosts, {} defenders",
        env.topology().subnets.len(),
        env.topology().hosts.len(),
        env.num_agents()
    );

    let mut observations = env.observe_all();
    let mut totals = RewardLedger::default();
    let mut team = 0.0;
    while !env.is_done() {
        let actions: Vec<BlueAction> = observations
            .iter()
            .enumerate()
            .map(
                |(agent, obs)| match obs.hosts.iter().find(|h| h.alerts.exploit_detected) {
                    Some(h) => BlueAction::new(agent, ActionKind::Restore(h.id)),
                    None => BlueAction::sleep(agent),
                },
            )
            .collect();
        let result = env.step(&actions)?;
        team += result.reward;
        totals.merge(&result.ledger);
        if result.step % 20 == 0 {
            let compromised = result
                .truth
                .compromise
                .iter()
                .filter(|c| **c != Compromise::Clean)
                .count();
            println!(
                "step {:>3}: reward {:>8.2}, compromised hosts {compromised}",
                result.step, result.reward
            );
        }
        observations = result.observations;
    }
    println!("team return {team:.2}");
    println!("{totals:#?}");
    Ok(())
}
