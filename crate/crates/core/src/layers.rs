// SPDX-License-Identifier: MIT OR Apache-2.0

//! Layer regimes: how much of the slot-attention variance at each layer is
//! positional versus content driven.
//!
//! With `alpha[n][l][p]` the attention of sample `n`, layer `l`, slot `p`:
//!
//! - `f_hat[p]` is the mean over samples and layers,
//! - the positional variance is the population variance of `f_hat` over slots,
//! - the content variance of layer `l` is the mean over slots of the
//!   population variance over samples,
//! - `rho[l]` is their ratio and `L*` the first layer with `rho >= 1`.

use serde::{Deserialize, Serialize};

use crate::blocks::PositionStats;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRegimeReport {
    pub f_hat: Vec<f64>,
    pub positional_variance: f64,
    pub content_variance: Vec<f64>,
    pub rho: Vec<f64>,
    #[serde(rename = "L_star")]
    pub l_star: Option<usize>,
    /// Per-layer `f_hat`, only filled in when diagnostics are requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_layer_f_hat: Option<Vec<Vec<f64>>>,
}

fn require_samples(stats: &PositionStats) -> Result<()> {
    if stats.n_samples < 2 {
        return Err(Error::invalid(
            "position stats",
            format!("need at least 2 samples, got {}", stats.n_samples),
        ));
    }
    Ok(())
}

pub fn estimate_positional_bias(stats: &PositionStats) -> Result<Vec<f64>> {
    require_samples(stats)?;
    let mut f = vec![0.0; stats.k];
    for n in 0..stats.n_samples {
        for l in 0..stats.n_layers {
            for (p, acc) in f.iter_mut().enumerate() {
                *acc += stats.get(n, l, p);
            }
        }
    }
    let count = (stats.n_samples * stats.n_layers) as f64;
    f.iter_mut().for_each(|v| *v /= count);
    Ok(f)
}

/// `f_hat` estimated separately for every layer, `[L][k]`.
pub fn estimate_positional_bias_per_layer(stats: &PositionStats) -> Result<Vec<Vec<f64>>> {
    require_samples(stats)?;
    let n = stats.n_samples as f64;
    Ok((0..stats.n_layers)
        .map(|l| {
            (0..stats.k)
                .map(|p| {
                    (0..stats.n_samples)
                        .map(|s| stats.get(s, l, p))
                        .sum::<f64>()
                        / n
                })
                .collect()
        })
        .collect())
}

fn population_variance(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (count, sum) = values
        .clone()
        .fold((0usize, 0.0), |(c, s), v| (c + 1, s + v));
    let mean = sum / count as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
    (mean, var)
}

pub fn variance_ratio(stats: &PositionStats) -> Result<LayerRegimeReport> {
    if stats.k < 2 {
        return Err(Error::invalid("position stats", "need k >= 2 slots"));
    }
    let f_hat = estimate_positional_bias(stats)?;
    let (mean, positional_variance) = population_variance(f_hat.iter().copied());
    if !(positional_variance > (1e-12 * mean).powi(2)) {
        return Err(Error::DegeneratePositionalField);
    }

    let content_variance: Vec<f64> = (0..stats.n_layers)
        .map(|l| {
            (0..stats.k)
                .map(|p| population_variance((0..stats.n_samples).map(|n| stats.get(n, l, p))).1)
                .sum::<f64>()
                / stats.k as f64
        })
        .collect();
    let rho: Vec<f64> = content_variance
        .iter()
        .map(|c| c / positional_variance)
        .collect();
    let l_star = threshold(&rho);
    Ok(LayerRegimeReport {
        f_hat,
        positional_variance,
        content_variance,
        rho,
        l_star,
        per_layer_f_hat: None,
    })
}

/// Smallest layer with `rho >= 1`, or `None` when every layer is
/// position dominated.
pub fn find_regime_threshold(report: &LayerRegimeReport) -> Option<usize> {
    threshold(&report.rho)
}

fn threshold(rho: &[f64]) -> Option<usize> {
    rho.iter().position(|&r| r >= 1.0)
}
