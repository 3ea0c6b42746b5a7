// SPDX-License-Identifier: MIT OR Apache-2.0

//! Shared fixtures: randomized valid dumps and brute-force reference
//! implementations written independently of the library code paths.

#![allow(dead_code)]

use attnbasin::dump::FORMAT_VERSION;
use attnbasin::{AggregationMode, AttentionDump, BlockSpan, DumpHeader, HeadMode, Spans};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Limits for [`random_dump`].
#[derive(Clone, Copy, Debug)]
pub struct DumpLimits {
    pub max_layers: usize,
    pub max_k: usize,
    pub max_tokens: usize,
    pub max_heads: usize,
}

impl Default for DumpLimits {
    fn default() -> Self {
        Self {
            max_layers: 8,
            max_k: 7,
            max_tokens: 256,
            max_heads: 3,
        }
    }
}

/// A valid dump with random spans (gaps allowed), random causal rows and a
/// random document permutation.
pub fn random_dump(seed: u64, limits: DumpLimits) -> AttentionDump {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = rng.random_range(1..=limits.max_layers);
    let k = rng.random_range(1..=limits.max_k);
    let heads = rng.random_range(1..=limits.max_heads);
    let head_mode = if rng.random_bool(0.5) {
        HeadMode::Mean
    } else {
        HeadMode::PerHead
    };

    // Lay out template, k docs, query left to right with optional gaps.
    let query_len = rng.random_range(1..=4usize);
    let budget = limits.max_tokens - query_len;
    let mut cursor = 0;
    let mut template = Vec::new();
    if rng.random_bool(0.7) {
        let len = rng.random_range(1..=4usize);
        template.push(BlockSpan::new("template", 0, len));
        cursor = len;
    }
    let max_doc = ((budget - cursor) / k).saturating_sub(1).clamp(1, 32);
    let mut docs = Vec::with_capacity(k);
    let perm = {
        let mut p: Vec<usize> = (0..k).collect();
        p.shuffle(&mut rng);
        p
    };
    for &doc in &perm {
        cursor += usize::from(rng.random_bool(0.2));
        let len = rng.random_range(1..=max_doc);
        docs.push(BlockSpan::new(format!("doc:{doc}"), cursor, cursor + len));
        cursor += len;
    }
    if cursor + query_len < budget && rng.random_bool(0.3) {
        template.push(BlockSpan::new("template", cursor, cursor + 1));
        cursor += 1;
    }
    let query = BlockSpan::new("query", cursor, cursor + query_len);
    let t = cursor + query_len;

    let mut stored_rows: Vec<usize> = (query.start..query.end)
        .filter(|_| rng.random_bool(0.6))
        .collect();
    if stored_rows.is_empty() {
        stored_rows.push(query.end - 1);
    }

    let stored_heads = match head_mode {
        HeadMode::Mean => 1,
        HeadMode::PerHead => heads,
    };
    let mut tensor = Vec::with_capacity(layers * stored_heads * stored_rows.len() * t);
    for _ in 0..layers * stored_heads {
        for &row in &stored_rows {
            let w: Vec<f64> = (0..=row).map(|_| rng.random::<f64>() + 1e-3).collect();
            let total: f64 = w.iter().sum();
            tensor.extend(w.iter().map(|v| (v / total) as f32));
            tensor.extend(std::iter::repeat_n(0.0f32, t - row - 1));
        }
    }
    let header = DumpHeader {
        format_version: FORMAT_VERSION,
        model_id: format!("fixture-{seed}"),
        num_layers: layers,
        num_heads: heads,
        num_tokens: t,
        head_mode,
        stored_rows,
        spans: Spans {
            template,
            docs,
            query,
        },
        sample_id: format!("fixture-{seed:04}"),
        permutation: perm,
        disrupted: false,
    };
    AttentionDump::new(header, tensor).expect("fixture tensor length")
}

/// Triple-loop reference for per-document block attention `[L][k]`, columns
/// keyed by original document index.
pub fn brute_force_blocks(dump: &AttentionDump, mode: AggregationMode) -> Vec<Vec<f64>> {
    let h = &dump.header;
    let heads = match h.head_mode {
        HeadMode::Mean => 1,
        HeadMode::PerHead => h.num_heads,
    };
    let rows = h.stored_rows.len();
    let t = h.num_tokens;
    let k = h.spans.docs.len();
    let mut out = vec![vec![0.0; k]; h.num_layers];
    for (l, out_l) in out.iter_mut().enumerate() {
        for (slot, span) in h.spans.docs.iter().enumerate() {
            let doc = h.permutation[slot];
            let mut total = 0.0;
            for hd in 0..heads {
                for r in 0..rows {
                    for tok in span.start..span.end {
                        let idx = ((l * heads + hd) * rows + r) * t + tok;
                        total += f64::from(dump.tensor[idx]);
                    }
                }
            }
            let mut v = total / (heads * rows) as f64;
            if mode == AggregationMode::TokenMean {
                v /= (span.end - span.start) as f64;
            }
            out_l[doc] = v;
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Generator settings with an engineered regime threshold at layer 3: the
/// analytic ratio is `[0.03, 0.03, 0.3, 3, 3]`, so content variance jumps
/// tenfold between layers 2 and 3. The base attention is high enough that
/// clipping at zero is rare.
pub fn regime_params(seed: u64) -> attnbasin::SyntheticBasinParams {
    regime_params_with_jump(seed, 10f64.sqrt())
}

/// As [`regime_params`] with a noise-scale jump of `jump` between layers 2
/// and 3 (variance jump `jump^2`).
pub fn regime_params_with_jump(seed: u64, jump: f64) -> attnbasin::SyntheticBasinParams {
    let mut p = attnbasin::SyntheticBasinParams {
        base: 0.12,
        curvature: 0.06,
        tokens_per_block: 4,
        template_tokens: 4,
        query_tokens: 1,
        seed,
        ..attnbasin::SyntheticBasinParams::new(5, 5)
    };
    let below = 10.0 / jump;
    p.layer_noise_growth = vec![1.0, 1.0, below, below * jump, below * jump];
    p.noise_scale = (0.03 * p.positional_variance()).sqrt();
    p
}

/// `[N, L, k]` position stats of `n` generator samples, token-sum blocks.
pub fn generator_stats(
    params: &attnbasin::SyntheticBasinParams,
    n: usize,
) -> attnbasin::PositionStats {
    let dumps = attnbasin::generate_synthetic_dumps(params, n, None).unwrap();
    let blocks: Vec<_> = dumps
        .iter()
        .map(|d| attnbasin::block_attention(d, AggregationMode::TokenSum).unwrap())
        .collect();
    attnbasin::collect_position_stats(&blocks).unwrap()
}

/// Six-layer generator whose noise grows tenfold from the first to the last
/// layer (or stays at `flat` everywhere). Probe sets hold 400 samples, the
/// size at which profiles are taken to have converged.
pub fn depth_params(seed: u64, flat: Option<f64>) -> attnbasin::SyntheticBasinParams {
    let mut p = attnbasin::SyntheticBasinParams {
        noise_scale: 0.08,
        tokens_per_block: 4,
        template_tokens: 4,
        query_tokens: 1,
        seed,
        ..attnbasin::SyntheticBasinParams::new(5, 6)
    };
    if let Some(g) = flat {
        p.layer_noise_growth = vec![g; 6];
    }
    p
}

pub const DEPTH_PROBE_SAMPLES: usize = 400;
