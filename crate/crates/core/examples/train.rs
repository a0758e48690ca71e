//! Trains a small shared-parameter policy and writes checkpoints plus the
//! per-round metrics CSV.
//!
//! ```text
//! cargo run --release --example train -- [out_dir] [episodes] [seed]
//! ```

use acdzero::config::RunConfig;
use acdzero::net::NetConfig;
use acdzero::sim::SimConfig;
use acdzero::train::{train, Behavior};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "runs/example".into());
    let episodes = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let mut cfg = RunConfig::desk();
    cfg.sim = SimConfig {
        horizon: 30,
        ..cfg.sim
    };
    cfg.net = NetConfig {
        hidden: 16,
        latent: 16,
        action_embed: 8,
    };
    cfg.train.episodes = episodes;
    cfg.train.behavior = Behavior::Mcts;
    cfg.validate()?;

    let outcome = train(&cfg, seed, Some(out.as_ref()))?;
    for m in &outcome.metrics {
        println!(
            "round {:>3}  episodes {:>4}  reward {:>9.2}  distill {:.4}  value {:.4}",
            m.round, m.episodes, m.mean_reward, m.loss_distill, m.loss_value
        );
    }
    println!("{} searches; checkpoints in {out}", outcome.search_calls);
    Ok(())
}
