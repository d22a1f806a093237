//! Random sampling bias: how many of N equiprobable regions N random draws
//! actually reach.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DscoError, Result};
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyResult {
    pub n_exp: usize,
    pub n_smps: usize,
    pub mean: f64,
    /// Population standard deviation over experiments.
    pub std: f64,
}

fn occupied(seed: u64, experiment: usize, n: usize) -> usize {
    let mut r = rng::stream(seed, streams::EXPERIMENT_BASE + experiment as u64);
    let mut hit = vec![false; n];
    for _ in 0..n {
        hit[r.random_range(0..n)] = true;
    }
    hit.into_iter().filter(|&h| h).count()
}

/// Monte-Carlo occupancy: each experiment draws `n_smps` uniform regions out
/// of `n_smps` on its own stream and counts the distinct ones.
pub fn mc_occupancy(n_exp: usize, n_smps: usize, seed: u64) -> Result<OccupancyResult> {
    if n_exp == 0 || n_smps == 0 {
        return Err(DscoError::Argument(
            "need at least one experiment and one region".into(),
        ));
    }
    let counts: Vec<usize> = (0..n_exp)
        .into_par_iter()
        .map(|e| occupied(seed, e, n_smps))
        .collect();
    let mean = counts.iter().sum::<usize>() as f64 / n_exp as f64;
    let var = counts
        .iter()
        .map(|&c| (c as f64 - mean).powi(2))
        .sum::<f64>()
        / n_exp as f64;
    Ok(OccupancyResult {
        n_exp,
        n_smps,
        mean,
        std: var.sqrt(),
    })
}

/// Expected number of occupied regions, `N (1 - (1 - 1/N)^N)`.
pub fn analytic_occupancy(n: usize) -> f64 {
    assert!(n >= 1, "occupancy of zero regions");
    let n = n as f64;
    n * (1.0 - (1.0 - 1.0 / n).powf(n))
}

/// Probability that N draws hit all N regions, `N! / N^N`.
pub fn ideal_probability(n: usize) -> f64 {
    assert!(n >= 1, "occupancy of zero regions");
    if n <= 20 {
        let mut p = 1.0;
        for k in 1..=n {
            p *= k as f64 / n as f64;
        }
        p
    } else {
        let log_fact: f64 = (1..=n).map(|k| (k as f64).ln()).sum();
        (log_fact - n as f64 * (n as f64).ln()).exp()
    }
}

pub const BIAS_HEADER: &str = "N,mc_mean,mc_std,analytic,ideal_prob";

pub fn bias_row(r: &OccupancyResult) -> String {
    format!(
        "{},{},{},{},{:e}",
        r.n_smps,
        r.mean,
        r.std,
        analytic_occupancy(r.n_smps),
        ideal_probability(r.n_smps)
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_region_is_always_occupied() {
        let r = mc_occupancy(50, 1, 3).unwrap();
        assert_eq!((r.mean, r.std), (1.0, 0.0));
        assert_eq!(analytic_occupancy(1), 1.0);
        assert_eq!(ideal_probability(1), 1.0);
    }

    #[test]
    fn closed_form_values() {
        assert!((analytic_occupancy(10) - 10.0 * (1.0 - 0.9f64.powi(10))).abs() < 1e-12);
        assert!((analytic_occupancy(10) - 6.513).abs() < 1e-3);
        assert!((analytic_occupancy(100) - 63.40).abs() < 5e-3);
        assert_eq!(ideal_probability(2), 0.5);
        assert!((ideal_probability(10) - 3_628_800.0 / 1e10).abs() < 1e-15);
        // Both branches agree where they meet.
        let direct: f64 = (1..=21).map(|k| k as f64 / 21.0).product();
        assert!((ideal_probability(21) / direct - 1.0).abs() < 1e-10);
    }

    #[test]
    fn seeded_and_order_independent() {
        let a = mc_occupancy(200, 30, 9).unwrap();
        let b = mc_occupancy(200, 30, 9).unwrap();
        assert_eq!(a, b);
        // The first 100 experiments of a longer run are the same experiments.
        let short = mc_occupancy(100, 30, 9).unwrap();
        let first: f64 = (0..100).map(|e| occupied(9, e, 30) as f64).sum::<f64>() / 100.0;
        assert_eq!(short.mean, first);
    }

    #[test]
    fn invalid_arguments() {
        assert!(mc_occupancy(0, 10, 0).is_err());
        assert!(mc_occupancy(10, 0, 0).is_err());
    }
}
