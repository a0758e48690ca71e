//! Smoothed learning curves aggregated over training runs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EvalError;

/// One training run: `(episodes so far, mean reward)` per round.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveInput {
    pub path: PathBuf,
    pub points: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episodes: usize,
    /// Mean over runs of each run's trailing-window average.
    pub mean_reward: f64,
    /// Population standard deviation over runs.
    pub std_reward: f64,
    pub runs: usize,
}

#[derive(Deserialize)]
struct InputRow {
    episodes: usize,
    mean_reward: f64,
}

pub fn read_curve_inputs(paths: &[PathBuf]) -> Result<Vec<CurveInput>, EvalError> {
    paths.iter().map(|p| read_one(p)).collect()
}

fn read_one(path: &Path) -> Result<CurveInput, EvalError> {
    let mut r = csv::Reader::from_path(path)?;
    let points = r
        .deserialize::<InputRow>()
        .map(|row| row.map(|row| (row.episodes, row.mean_reward)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CurveInput {
        path: path.to_path_buf(),
        points,
    })
}

/// Trailing moving average of width `window` per run, then mean and spread
/// across runs. Runs are cut to the shortest one and must agree on the
/// episode counts they share.
pub fn learning_curve(runs: &[CurveInput], window: usize) -> Result<Vec<CurveRow>, EvalError> {
    if window == 0 {
        return Err(EvalError::Input("window must be at least 1".into()));
    }
    let Some(len) = runs.iter().map(|r| r.points.len()).min() else {
        return Ok(Vec::new());
    };
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let episodes = runs[0].points[i].0;
        if let Some(r) = runs.iter().find(|r| r.points[i].0 != episodes) {
            return Err(EvalError::Input(format!(
                "{} has {} episodes at row {i}, expected {episodes}",
                r.path.display(),
                r.points[i].0
            )));
        }
        let lo = (i + 1).saturating_sub(window);
        let smoothed: Vec<f64> = runs
            .iter()
            .map(|r| {
                let w = &r.points[lo..=i];
                w.iter().map(|p| p.1).sum::<f64>() / w.len() as f64
            })
            .collect();
        let n = smoothed.len() as f64;
        let mean = smoothed.iter().sum::<f64>() / n;
        let var = smoothed.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        out.push(CurveRow {
            episodes,
            mean_reward: mean,
            std_reward: var.sqrt(),
            runs: runs.len(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(points: &[(usize, f64)]) -> CurveInput {
        CurveInput {
            path: PathBuf::from("x.csv"),
            points: points.to_vec(),
        }
    }

    #[test]
    fn window_one_reproduces_a_single_run() {
        let pts = [(5, -3.25), (10, 1.0 / 3.0), (15, 7.5)];
        let rows = learning_curve(&[run(&pts)], 1).unwrap();
        for (row, p) in rows.iter().zip(&pts) {
            assert_eq!(
                (row.episodes, row.mean_reward, row.std_reward),
                (p.0, p.1, 0.0)
            );
        }
    }

    #[test]
    fn trailing_window_and_spread() {
        let a = run(&[(5, 0.0), (10, 2.0), (15, 4.0)]);
        let b = run(&[(5, 2.0), (10, 2.0), (15, 2.0)]);
        let rows = learning_curve(&[a, b], 2).unwrap();
        assert_eq!(rows[0].mean_reward, 1.0);
        assert_eq!(rows[0].std_reward, 1.0);
        assert_eq!(rows[2].mean_reward, 2.5);
        assert_eq!(rows[2].std_reward, 0.5);
    }

    #[test]
    fn mismatched_episode_counts_are_rejected() {
        let a = run(&[(5, 0.0)]);
        let b = run(&[(6, 0.0)]);
        assert!(learning_curve(&[a, b], 1).is_err());
        assert!(learning_curve(&[run(&[(5, 0.0)])], 0).is_err());
    }
}
