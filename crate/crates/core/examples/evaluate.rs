//! Trains each ablation variant briefly and compares them on the same
//! evaluation episodes.
//!
//! ```text
//! cargo run --release --example evaluate -- [train_episodes]
//! ```

use acdzero::config::RunConfig;
use acdzero::eval::{evaluate, AblationVariant, EvalSpec};
use acdzero::train::train;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let episodes = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(10);
    let mut base = RunConfig::desk();
    base.sim.horizon = 40;
    base.train.episodes = episodes;
    let spec = EvalSpec {
        episodes: 10,
        steps: 40,
        seed: 1,
        with_search: false,
    };
    for variant in AblationVariant::ALL {
        let cfg = variant.apply(&base);
        let outcome = train(&cfg, 0, None)?;
        let eval = evaluate(&outcome.policy, &cfg, &spec)?;
        let rewards: Vec<f64> = eval.metrics.iter().map(|m| m.reward).collect();
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let impacts: usize = eval.metrics.iter().map(|m| m.impact_count).sum();
        println!(
            "{:<11} reward {mean:>9.2}  impacts {impacts:>4}  searches {}",
            variant.name(),
            outcome.search_calls
        );
    }
    Ok(())
}
