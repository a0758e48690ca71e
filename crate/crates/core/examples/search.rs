//! Runs the latent-model tree search for one defender and prints the root
//! statistics and the first simulations of the trace.
//!
//! ```text
//! cargo run --example search -- [checkpoint.acdz]
//! ```
//!
//! Without a checkpoint the network is freshly initialised, so the prior is
//! uniform and every predicted reward and value is zero.

use acdzero::eval::{config_for_checkpoint, load_policy};
use acdzero::graph::{build_graph, enumerate_actions, AgentMemory};
use acdzero::mcts::{search_tree, LatentModel, SearchConfig, SearchMode};
use acdzero::net::{NetConfig, Policy};
use acdzero::sim::{BlueAction, CyberEnv, SimConfig, NUM_AGENTS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let policy = match std::env::args().nth(1) {
        Some(path) => {
            let path = std::path::Path::new(&path);
            load_policy(path, &config_for_checkpoint(path, None)?)?
        }
        None => Policy::new(NetConfig::desk(), true, NUM_AGENTS, 0)?,
    };

    let mut env = CyberEnv::new(SimConfig::desk(), 3)?;
    let idle: Vec<BlueAction> = (0..env.num_agents()).map(BlueAction::sleep).collect();
    for _ in 0..15 {
        env.step(&idle)?;
    }
    let agent = 2;
    let obs = env.observe(agent)?;
    let mut memory = AgentMemory::new(agent);
    memory.observe(&obs);
    let graph = build_graph(&obs, &memory)?;
    let catalog = enumerate_actions(&graph, &obs);

    let (model, root) = LatentModel::new(policy.net(agent), &policy.store, &graph, &catalog)?;
    let config = SearchConfig {
        num_simulations: 32,
        ..SearchConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (result, tree) = search_tree(
        &model,
        root.latent,
        &catalog.mask,
        &config,
        SearchMode::Train,
        &mut rng,
    )?;

    println!(
        "{} actions, {} nodes after {} simulations",
        catalog.len(),
        tree.nodes.len(),
        config.num_simulations
    );
    println!(
        "root value {:.4} (critic {:.4})",
        result.root_value, root.value
    );
    let mut ranked: Vec<usize> = (0..catalog.len())
        .filter(|&a| result.visits[a] > 0)
        .collect();
    ranked.sort_by_key(|&a| std::cmp::Reverse(result.visits[a]));
    for &a in ranked.iter().take(8) {
        let edge = &tree.nodes[0].edges[a];
        println!(
            "  {:<28} visits {:>2}  π {:.3}  prior {:.3}  Q {:+.4}",
            format!("{:?}", catalog.entries[a].command),
            result.visits[a],
            result.policy[a],
            edge.prior,
            edge.q
        );
    }
    println!("principal variation {:?}", result.principal_variation);
    for record in result.trace.iter().take(3) {
        println!(
            "  sim {}: path {:?}, returns {:?}",
            record.simulation, record.path, record.returns
        );
    }
    Ok(())
}
