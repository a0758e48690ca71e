//! Aggregates metrics CSVs from several runs into one smoothed learning
//! curve with a spread across runs.
//!
//! ```text
//! cargo run --example learning_curve -- 'runs/*/metrics.csv' [window]
//! ```

use acdzero::eval::{learning_curve, read_curve_inputs};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let pattern = args.next().unwrap_or_else(|| "runs/*/metrics.csv".into());
    let window = args.next().map(|s| s.parse()).transpose()?.unwrap_or(5);

    let mut paths: Vec<_> = glob::glob(&pattern)?.collect::<Result<_, _>>()?;
    paths.sort();
    if paths.is_empty() {
        eprintln!("no files match {pattern}");
        std::process::exit(2);
    }
    let runs = read_curve_inputs(&paths)?;
    for row in learning_curve(&runs, window)? {
        println!(
            "{:>6} {:>10.2} ± {:<8.2} ({} runs)",
            row.episodes, row.mean_reward, row.std_reward, row.runs
        );
    }
    Ok(())
}
