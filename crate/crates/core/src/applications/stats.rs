//! Summary statistics for classification margins and tail-risk estimates.

use super::AppError;
use crate::risk::{self, RiskLevel};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Per-distribution margin summary. `cvar` is the lower-tail CVaR of the
/// margin at level ε — the mean of the worst 100ε% margins, reported on the
/// margin scale (negative means tail failures).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarginStats {
    pub mean: f64,
    pub median: f64,
    pub std_dev: f64,
    pub positive_ratio: f64,
    pub cvar: f64,
    pub epsilon: f64,
}

pub fn margin_stats(margins: &[f64], eps: RiskLevel) -> Result<MarginStats, AppError> {
    if margins.is_empty() {
        return Err(AppError::InsufficientData);
    }
    let n = margins.len() as f64;
    let mean = margins.iter().sum::<f64>() / n;
    let var = margins.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>()
        / (n - 1.0).max(1.0);
    let mut sorted = margins.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len().is_multiple_of(2) {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    };
    let positive_ratio = margins.iter().filter(|&&m| m > 0.0).count() as f64 / n;
    // Lower tail of the margin = upper tail of the negated margin.
    let losses: Vec<f64> = margins.iter().map(|m| -m).collect();
    let cvar = -risk::empirical_cvar(&losses, eps)?;
    Ok(MarginStats {
        mean,
        median,
        std_dev: var.sqrt(),
        positive_ratio,
        cvar,
        epsilon: eps.value(),
    })
}

/// Bootstrap standard error of the empirical CVaR of `values` at level ε.
///
/// Resamples are drawn as multinomial counts over the sorted values, so each
/// replicate costs O(N) without re-sorting.
pub fn bootstrap_cvar_stderr(
    values: &[f64],
    eps: RiskLevel,
    replicates: usize,
    seed: u64,
) -> Result<f64, AppError> {
    if values.is_empty() {
        return Err(AppError::InsufficientData);
    }
    if replicates < 2 {
        return Err(AppError::InvalidParameter(
            "bootstrap needs at least 2 replicates".into(),
        ));
    }
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| f64::total_cmp(b, a)); // descending
    let k = eps.value() * n as f64;
    let rank = (k.ceil() as usize).clamp(1, n);

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut counts = vec![0u32; n];
    let mut estimates = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        counts.fill(0);
        for _ in 0..n {
            counts[rng.random_range(0..n)] += 1;
        }
        let mut cum = 0usize;
        let mut sum_above = 0.0;
        let mut cvar = sorted[0];
        for (i, &c) in counts.iter().enumerate() {
            let c = c as usize;
            if c == 0 {
                continue;
            }
            if cum + c >= rank {
                let beta = sorted[i];
                cvar = beta + (sum_above - beta * cum as f64) / k;
                break;
            }
            cum += c;
            sum_above += c as f64 * sorted[i];
        }
        estimates.push(cvar);
    }
    let m = estimates.iter().sum::<f64>() / estimates.len() as f64;
    let var = estimates.iter().map(|e| (e - m) * (e - m)).sum::<f64>()
        / (estimates.len() - 1) as f64;
    Ok(var.sqrt())
}
