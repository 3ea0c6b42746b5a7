// SPDX-License-Identifier: MIT OR Apache-2.0

//! Desk-scale versions of the two mechanism experiments: every ordering of a
//! small document set (grouped by which documents get the most attention),
//! and reranking with profiles taken from one layer at a time. Outcomes are
//! the [`TheoryModel`] answer probabilities, not real QA accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::blocks::{block_attention, cross_layer_mean, AggregationMode, BlockAttention};
use crate::dump::AttentionDump;
use crate::error::{Error, Result};
use crate::rerank::{order_indices, Strategy};
use crate::synth::{rng_for, SyntheticBasinParams};
use crate::theory::{answer_distribution, layer_mean, TheoryModel};

/// Largest document count the permutation experiment will enumerate.
pub const MAX_PERMUTATION_K: usize = 8;

/// A fresh seed for replication `index` of `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    rng_for(seed, index).next_u64()
}

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..k).collect();
    let mut out = vec![current.clone()];
    loop {
        let Some(i) = (1..k).rev().find(|&i| current[i - 1] < current[i]) else {
            return out;
        };
        let pivot = i - 1;
        let j = (pivot + 1..k)
            .rev()
            .find(|&j| current[j] > current[pivot])
            .expect("a larger element exists right of the pivot");
        current.swap(pivot, j);
        current[i..].reverse();
        out.push(current.clone());
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingRule {
    /// The best-attended relevant document beats every noise document.
    #[default]
    Max,
    /// Total attention on relevant documents beats total on noise documents.
    Sum,
}

impl std::str::FromStr for GroupingRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(GroupingRule::Max),
            "sum" => Ok(GroupingRule::Sum),
            other => Err(Error::invalid("grouping rule", other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    RelevantTop,
    NoiseTop,
}

impl GroupingRule {
    /// Ties go to [`Group::NoiseTop`].
    pub fn assign(self, alpha: &[f64], relevant: &[bool]) -> Group {
        let pick = |want: bool| alpha.iter().zip(relevant).filter(move |(_, &r)| r == want);
        let rel: Vec<f64> = pick(true).map(|(a, _)| *a).collect();
        let noise: Vec<f64> = pick(false).map(|(a, _)| *a).collect();
        if noise.is_empty() {
            return Group::RelevantTop;
        }
        if rel.is_empty() {
            return Group::NoiseTop;
        }
        let wins = match self {
            GroupingRule::Max => {
                let best = rel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                noise.iter().all(|&n| best > n)
            }
            GroupingRule::Sum => rel.iter().sum::<f64>() > noise.iter().sum::<f64>(),
        };
        if wins {
            Group::RelevantTop
        } else {
            Group::NoiseTop
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationTrial {
    /// Original document index at each slot.
    pub permutation: Vec<usize>,
    pub relevance_labels: Vec<bool>,
    /// Cross-layer mean attention per document (by original index).
    pub block_attention: Vec<f64>,
    pub group: Group,
    /// Total answer probability on the relevant documents' answers.
    pub outcome: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationReport {
    pub rule: GroupingRule,
    pub trials: Vec<PermutationTrial>,
    pub relevant_top_mean: Option<f64>,
    pub noise_top_mean: Option<f64>,
    pub overall_mean: f64,
    pub warnings: Vec<String>,
}

impl PermutationReport {
    /// Plain-text table, one row per ordering.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<20} {:<13} {:>10}", "order", "group", "outcome");
        for t in &self.trials {
            let order = t
                .permutation
                .iter()
                .map(|d| {
                    if t.relevance_labels[*d] {
                        format!("R{d}")
                    } else {
                        format!("N{d}")
                    }
                })
                .collect::<Vec<_>>()
                .join(" ");
            let group = match t.group {
                Group::RelevantTop => "relevant_top",
                Group::NoiseTop => "noise_top",
            };
            let _ = writeln!(s, "{order:<20} {group:<13} {:>10.6}", t.outcome);
        }
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(s, "relevant_top mean: {}", fmt(self.relevant_top_mean));
        let _ = writeln!(s, "noise_top mean:    {}", fmt(self.noise_top_mean));
        let _ = writeln!(s, "rule: {:?}", self.rule);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("trial,permutation,group,outcome\n");
        for (i, t) in self.trials.iter().enumerate() {
            let perm = t
                .permutation
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(" ");
            let group = match t.group {
                Group::RelevantTop => "relevant_top",
                Group::NoiseTop => "noise_top",
            };
            let _ = writeln!(s, "{i},{perm},{group},{}", t.outcome);
        }
        s
    }
}

/// Where slot attention for a given ordering comes from.
#[derive(Clone, Copy, Debug)]
pub enum SlotAttentionSource<'a> {
    /// Fresh generator draws, averaged over `draws` per ordering.
    Generator {
        params: &'a SyntheticBasinParams,
        draws: usize,
    },
    /// Aggregated dumps; each ordering needs at least one dump carrying it.
    Dumps(&'a [BlockAttention]),
}

fn doc_attention_from_generator(
    params: &SyntheticBasinParams,
    draws: usize,
    perm_index: usize,
    perm: &[usize],
) -> Vec<f64> {
    let draws = draws.max(1);
    let mut slot = vec![0.0; params.k];
    for d in 0..draws {
        let mut rng = rng_for(params.seed, (perm_index * draws + d) as u64);
        for (acc, v) in slot
            .iter_mut()
            .zip(layer_mean(&params.draw_slot_attention(&mut rng)))
        {
            *acc += v;
        }
    }
    let mut doc = vec![0.0; params.k];
    for (s, &d) in perm.iter().enumerate() {
        doc[d] = slot[s] / draws as f64;
    }
    doc
}

pub fn permutation_experiment(
    source: SlotAttentionSource<'_>,
    relevance_labels: &[bool],
    model: &TheoryModel,
    rule: GroupingRule,
) -> Result<PermutationReport> {
    let k = relevance_labels.len();
    if k == 0 || k > MAX_PERMUTATION_K {
        return Err(Error::invalid(
            "permutation experiment",
            format!("k = {k}, must be in 1..={MAX_PERMUTATION_K}"),
        ));
    }
    if model.k != k {
        return Err(Error::Shape(format!(
            "model has {} documents, labels {k}",
            model.k
        )));
    }
    let orders = permutations(k);

    let attention: Vec<Vec<f64>> = match source {
        SlotAttentionSource::Generator { params, draws } => {
            params.validate()?;
            if params.k != k {
                return Err(Error::Shape(format!(
                    "generator has {} slots, labels {k}",
                    params.k
                )));
            }
            orders
                .iter()
                .enumerate()
                .map(|(i, p)| doc_attention_from_generator(params, draws, i, p))
                .collect()
        }
        SlotAttentionSource::Dumps(blocks) => {
            let mut by_perm: BTreeMap<&[usize], (Vec<f64>, usize)> = BTreeMap::new();
            for ba in blocks {
                if ba.k() != k {
                    return Err(Error::Shape(format!(
                        "sample {} has {} documents, labels {k}",
                        ba.sample_id,
                        ba.k()
                    )));
                }
                let all: Vec<usize> = (0..ba.num_layers()).collect();
                let mean = cross_layer_mean(ba, &all)?;
                let entry = by_perm
                    .entry(ba.permutation.as_slice())
                    .or_insert_with(|| (vec![0.0; k], 0));
                entry.0.iter_mut().zip(mean).for_each(|(a, v)| *a += v);
                entry.1 += 1;
            }
            let missing: Vec<String> = orders
                .iter()
                .filter(|p| !by_perm.contains_key(p.as_slice()))
                .map(|p| format!("{p:?}"))
                .collect();
            if !missing.is_empty() {
                return Err(Error::Missing(format!(
                    "dumps for permutations {}",
                    missing.join(", ")
                )));
            }
            orders
                .iter()
                .map(|p| {
                    let (sum, n) = &by_perm[p.as_slice()];
                    sum.iter().map(|v| v / *n as f64).collect()
                })
                .collect()
        }
    };

    let mut trials = Vec::with_capacity(orders.len());
    for (perm, alpha) in orders.into_iter().zip(attention) {
        let probs = answer_distribution(model, &alpha)?;
        let outcome = probs
            .iter()
            .zip(relevance_labels)
            .filter(|(_, &r)| r)
            .map(|(p, _)| p)
            .sum();
        trials.push(PermutationTrial {
            group: rule.assign(&alpha, relevance_labels),
            permutation: perm,
            relevance_labels: relevance_labels.to_vec(),
            block_attention: alpha,
            outcome,
        });
    }

    let mean_of = |g: Group| {
        let v: Vec<f64> = trials
            .iter()
            .filter(|t| t.group == g)
            .map(|t| t.outcome)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let mut warnings = Vec::new();
    let n_rel = relevance_labels.iter().filter(|&&r| r).count();
    if n_rel == 0 || n_rel == k {
        warnings.push(format!(
            "degenerate labels ({n_rel} of {k} relevant): single group, report reduces to the overall mean"
        ));
    }
    let overall_mean = trials.iter().map(|t| t.outcome).sum::<f64>() / trials.len() as f64;
    Ok(PermutationReport {
        rule,
        relevant_top_mean: mean_of(Group::RelevantTop),
        noise_top_mean: mean_of(Group::NoiseTop),
        overall_mean,
        trials,
        warnings,
    })
}

/// How reranked orders are scored in the layer-wise experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct RerankEval {
    /// Retriever relevance of each document; the most relevant is the target.
    pub relevance: Vec<f64>,
    /// Slot attention used to score a presented order, `[k]`.
    pub eval_attention: Vec<f64>,
    pub model: TheoryModel,
}

impl RerankEval {
    pub fn target(&self) -> usize {
        (0..self.relevance.len())
            .max_by(|&a, &b| {
                self.relevance[a]
                    .total_cmp(&self.relevance[b])
                    .then(b.cmp(&a))
            })
            .unwrap_or(0)
    }

    /// `P(y_target)` when documents are presented in `order`.
    pub fn score(&self, order: &[usize]) -> Result<f64> {
        let mut alpha = vec![0.0; order.len()];
        for (slot, &doc) in order.iter().enumerate() {
            alpha[doc] = self.eval_attention[slot];
        }
        Ok(answer_distribution(&self.model, &alpha)?[self.target()])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerwiseReport {
    /// Profile built from each layer alone, `[L][k]`.
    pub profiles: Vec<Vec<f64>>,
    /// AttnRank order under each layer's profile.
    pub orders: Vec<Vec<usize>>,
    pub outcomes: Vec<f64>,
}

/// Profiles every layer separately, reranks with each, and scores the result.
pub fn layerwise_rerank_experiment(
    dumps: &[AttentionDump],
    mode: AggregationMode,
    eval: &RerankEval,
) -> Result<LayerwiseReport> {
    let blocks = dumps
        .iter()
        .map(|d| block_attention(d, mode))
        .collect::<Result<Vec<_>>>()?;
    layerwise_rerank_blocks(&blocks, eval)
}

pub fn layerwise_rerank_blocks(
    blocks: &[BlockAttention],
    eval: &RerankEval,
) -> Result<LayerwiseReport> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::invalid("layer-wise experiment", "no dumps"))?;
    let layers = first.num_layers();
    if layers < 2 {
        return Err(Error::invalid(
            "layer-wise experiment",
            format!("dumps carry {layers} layer(s), need at least 2"),
        ));
    }
    let k = first.k();
    if eval.relevance.len() != k || eval.eval_attention.len() != k || eval.model.k != k {
        return Err(Error::Shape(format!(
            "evaluation setup does not match k = {k}"
        )));
    }
    let mut profiles = vec![vec![0.0; k]; layers];
    for ba in blocks {
        if ba.num_layers() != layers || ba.k() != k {
            return Err(Error::Shape(format!(
                "sample {} has a different shape",
                ba.sample_id
            )));
        }
        for (l, profile) in profiles.iter_mut().enumerate() {
            profile
                .iter_mut()
                .zip(ba.slot_values(l))
                .for_each(|(a, v)| *a += v);
        }
    }
    let n = blocks.len() as f64;
    profiles
        .iter_mut()
        .for_each(|p| p.iter_mut().for_each(|v| *v /= n));

    let mut orders = Vec::with_capacity(layers);
    let mut outcomes = Vec::with_capacity(layers);
    for profile in &profiles {
        let order = order_indices(&eval.relevance, Strategy::Attnrank, Some(profile), None)?;
        outcomes.push(eval.score(&order)?);
        orders.push(order);
    }
    Ok(LayerwiseReport {
        profiles,
        orders,
        outcomes,
    })
}

/// Runs the layer-wise experiment on `replications` independent synthetic
/// probe sets of `samples` dumps each. Returns `[replication][layer]`.
///
/// Documents get relevance `k, k-1, ..., 1` and orders are scored against
/// the generator's noiseless slot attention `f(p)`.
pub fn layerwise_replications(
    params: &SyntheticBasinParams,
    samples: usize,
    replications: usize,
    model: &TheoryModel,
) -> Result<Vec<Vec<f64>>> {
    let k = params.k;
    let eval = RerankEval {
        relevance: (0..k).map(|i| (k - i) as f64).collect(),
        eval_attention: params.positional_bias(),
        model: model.clone(),
    };
    (0..replications)
        .map(|r| {
            let mut p = params.clone();
            p.seed = derive_seed(params.seed, r as u64);
            let dumps = crate::synth::generate_synthetic_dumps(&p, samples, None)?;
            Ok(layerwise_rerank_experiment(&dumps, AggregationMode::TokenSum, &eval)?.outcomes)
        })
        .collect()
}

/// Percentile bootstrap interval for the mean of `values`.
pub fn bootstrap_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len();
    let mut rng = rng_for(seed, 0);
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let at = |q: f64| means[((q * (means.len() - 1) as f64).round() as usize).min(means.len() - 1)];
    (at(alpha), at(1.0 - alpha))
}

/// A retrieved document with a ground-truth label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDoc {
    pub relevance: f64,
    pub relevant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyAttention {
    pub strategy: Strategy,
    /// Mean profile score at the slots holding relevant documents.
    pub relevant_mean: f64,
    /// Mean profile score at the slots holding noise documents.
    pub noise_mean: f64,
}

/// For each strategy, the average profile attention landing on relevant and
/// on noise documents over a set of queries.
pub fn strategy_attention_comparison(
    profile: &[f64],
    queries: &[Vec<LabeledDoc>],
    strategies: &[Strategy],
    seed: u64,
) -> Result<Vec<StrategyAttention>> {
    let k = profile.len();
    let mut out = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let (mut rel_sum, mut rel_n, mut noise_sum, mut noise_n) = (0.0, 0usize, 0.0, 0usize);
        for (qi, docs) in queries.iter().enumerate() {
            if docs.len() != k {
                return Err(Error::Shape(format!(
                    "query {qi} has {} documents, profile {k}",
                    docs.len()
                )));
            }
            let relevance: Vec<f64> = docs.iter().map(|d| d.relevance).collect();
            let order = order_indices(
                &relevance,
                strategy,
                Some(profile),
                Some(derive_seed(seed, qi as u64)),
            )?;
            for (slot, &doc) in order.iter().enumerate() {
                if docs[doc].relevant {
                    rel_sum += profile[slot];
                    rel_n += 1;
                } else {
                    noise_sum += profile[slot];
                    noise_n += 1;
                }
            }
        }
        let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
        out.push(StrategyAttention {
            strategy,
            relevant_mean: mean(rel_sum, rel_n),
            noise_mean: mean(noise_sum, noise_n),
        });
    }
    Ok(out)
}

/// `slot,value` CSV for plotting a curve over slots (1-based).
pub fn curve_csv(values: &[f64]) -> String {
    let mut s = String::from("slot,value\n");
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{},{}", i + 1, v);
    }
    s
}
