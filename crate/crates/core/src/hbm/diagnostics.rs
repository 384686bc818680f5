//! Multi-chain convergence diagnostics: split R-hat and effective sample
//! size with Geyer's initial monotone sequence.

use crate::stats::{mean, sample_variance};

/// Split R-hat over equal-length chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let half = chains.iter().map(Vec::len).min().unwrap_or(0) / 2;
    if half < 2 {
        return f64::NAN;
    }
    let splits: Vec<&[f64]> = chains.iter().flat_map(|c| [&c[..half], &c[half..2 * half]]).collect();
    let means: Vec<f64> = splits.iter().map(|s| mean(s)).collect();
    let w = mean(&splits.iter().map(|s| sample_variance(s).unwrap_or(0.0)).collect::<Vec<_>>());
    let b_over_n = sample_variance(&means).unwrap_or(0.0);
    if w == 0.0 {
        return if b_over_n == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let n = half as f64;
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt()
}

fn autocovariance(chain: &[f64], chain_mean: f64, lag: usize) -> f64 {
    let n = chain.len();
    chain[..n - lag]
        .iter()
        .zip(&chain[lag..])
        .map(|(a, b)| (a - chain_mean) * (b - chain_mean))
        .sum::<f64>()
        / n as f64
}

/// Effective sample size of the pooled draws.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let m = chains.len();
    if n < 4 || m == 0 {
        return f64::NAN;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| sample_variance(c).unwrap_or(0.0)).collect::<Vec<_>>());
    let b_over_n = if m > 1 { sample_variance(&means).unwrap_or(0.0) } else { 0.0 };
    let nf = n as f64;
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    if var_plus <= 0.0 {
        return (m * n) as f64;
    }
    let rho = |t: usize| {
        let acov = chains.iter().zip(&means).map(|(c, &mu)| autocovariance(c, mu, t)).sum::<f64>() / m as f64;
        1.0 - (w - acov) / var_plus
    };

    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        t += 2;
    }
    let tau = tau.max(1.0 / (m * n) as f64);
    (m * n) as f64 / tau
}

/// Monte Carlo standard error of the pooled mean.
pub fn mcse_mean(chains: &[Vec<f64>]) -> f64 {
    let all: Vec<f64> = chains.iter().flatten().copied().collect();
    (sample_variance(&all).unwrap_or(0.0) / effective_sample_size(chains)).sqrt()
}
