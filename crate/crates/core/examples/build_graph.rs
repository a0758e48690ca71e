//! Turns one defender's local observation into an attributed graph and its
//! action catalog, then writes the graph as JSON lines.
//!
//! ```text
//! cargo run --example build_graph -- [agent] > graph.jsonl
//! ```

use acdzero::graph::{
    action_features, build_graph, enumerate_actions, AgentMemory, NodeKind, Template,
};
use acdzero::sim::{BlueAction, CyberEnv, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let agent: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(0);
    let mut env = CyberEnv::new(SimConfig::desk(), 11)?;
    let mut memory = AgentMemory::new(agent);
    // A few idle steps so the red agent has produced some alerts.
    let idle: Vec<BlueAction> = (0..env.num_agents()).map(BlueAction::sleep).collect();
    for _ in 0..12 {
        let r = env.step(&idle)?;
        memory.observe(&r.observations[agent]);
    }
    let obs = env.observe(agent)?;
    memory.observe(&obs);

    let graph = build_graph(&obs, &memory)?;
    let catalog = enumerate_actions(&graph, &obs);
    let features = action_features(&graph, &catalog);

    eprintln!("agent {agent} at step {}", env.timestep());
    for kind in [
        NodeKind::Subnet,
        NodeKind::Host,
        NodeKind::Port,
        NodeKind::File,
    ] {
        eprintln!("  {kind:?} nodes: {}", graph.count(kind));
    }
    eprintln!(
        "  edges: {}, global context: {:?}",
        graph.edges.len(),
        graph.global
    );
    eprintln!(
        "  actions: {} ({} legal), feature matrix {:?}",
        catalog.len(),
        catalog.legal_count(),
        features.shape()
    );
    for template in [
        Template::Sleep,
        Template::Analyze,
        Template::Restore,
        Template::DeployDecoy,
        Template::BlockTraffic,
        Template::AllowTraffic,
    ] {
        let n = catalog
            .entries
            .iter()
            .filter(|e| e.template == template)
            .count();
        eprintln!("    {template:?}: {n}");
    }
    graph.dump(std::io::stdout().lock())?;
    Ok(())
}
