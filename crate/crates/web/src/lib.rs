// SPDX-License-Identifier: MIT OR Apache-2.0

//! Browser bindings. Every export takes and returns JSON strings so the page
//! needs no generated type glue beyond wasm-bindgen's string passing.

use attnbasin::harness::{strategy_attention_comparison, LabeledDoc};
use attnbasin::synth::geometric_growth;
use attnbasin::theory::placement_sweep;
use attnbasin::{
    block_attention, check_convergence, collect_position_stats, detect_basin, variance_ratio,
    AggregationMode, AttentionProfile, LayerSelection, ProfileAccumulator, Strategy,
    SyntheticBasinParams, TheoryModel,
};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Generator knobs exposed on the page.
#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct DemoParams {
    pub k: usize,
    pub layers: usize,
    pub base: f64,
    pub curvature: f64,
    pub noise_scale: f64,
    pub growth_factor: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for DemoParams {
    fn default() -> Self {
        Self {
            k: 5,
            layers: 8,
            base: 0.1,
            curvature: 0.1,
            noise_scale: 0.01,
            growth_factor: 10.0,
            samples: 200,
            seed: 7,
        }
    }
}

const MAX_SAMPLES: usize = 2000;

impl DemoParams {
    fn params(&self) -> Result<SyntheticBasinParams, String> {
        if self.samples < 2 || self.samples > MAX_SAMPLES {
            return Err(format!("samples must be in 2..={MAX_SAMPLES}"));
        }
        let mut p = SyntheticBasinParams::new(self.k, self.layers);
        p.base = self.base;
        p.curvature = self.curvature;
        p.noise_scale = self.noise_scale;
        p.layer_noise_growth = geometric_growth(self.layers, self.growth_factor);
        p.tokens_per_block = 8;
        p.template_tokens = 4;
        p.query_tokens = 2;
        p.seed = self.seed;
        p.validate().map_err(|e| e.to_string())?;
        Ok(p)
    }
}

#[derive(Serialize)]
struct ProfileView {
    scores: Vec<f64>,
    expected: Vec<f64>,
    is_basin: bool,
    depth: f64,
    converged_at: Option<usize>,
    history: Vec<(usize, f64)>,
    rho: Vec<f64>,
    analytic_rho: Vec<f64>,
    l_star: Option<usize>,
}

/// Generates dumps, profiles layer 0 and splits the variance by layer.
pub fn profile_view(params: &DemoParams) -> Result<String, String> {
    let p = params.params()?;
    let mut acc = ProfileAccumulator::new(
        p.k,
        LayerSelection::Layer(0),
        AggregationMode::TokenMean,
        50,
    );
    let mut sums = Vec::with_capacity(params.samples);
    let identity: Vec<usize> = (0..p.k).collect();
    for i in 0..params.samples {
        let dump = p.generate_one(i, &identity).map_err(|e| e.to_string())?;
        let mean = block_attention(&dump, AggregationMode::TokenMean).map_err(|e| e.to_string())?;
        acc.accumulate_blocks(&mean).map_err(|e| e.to_string())?;
        sums.push(block_attention(&dump, AggregationMode::TokenSum).map_err(|e| e.to_string())?);
    }
    let profile = acc.finalize("synthetic").map_err(|e| e.to_string())?;
    let basin = detect_basin(&profile).map_err(|e| e.to_string())?;
    let conv = check_convergence(&acc, 1e-4, 2);
    let stats = collect_position_stats(&sums).map_err(|e| e.to_string())?;
    let (rho, l_star) = match variance_ratio(&stats) {
        Ok(r) => (r.rho, r.l_star),
        Err(_) => (Vec::new(), None),
    };
    let view = ProfileView {
        scores: profile.normalized(),
        expected: p.expected_profile(),
        is_basin: basin.is_basin,
        depth: basin.depth,
        converged_at: conv.n_star,
        history: acc.convergence_history(),
        rho,
        analytic_rho: p.analytic_rho(),
        l_star,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Deserialize)]
struct RerankRequest {
    scores: Vec<f64>,
    /// Relevance of each retrieved document, in retriever order.
    relevance: Vec<f64>,
    /// How many of the top-relevance documents count as relevant.
    relevant: usize,
    queries: usize,
    seed: u64,
}

#[derive(Serialize)]
struct RerankView {
    orders: Vec<(Strategy, Vec<usize>)>,
    attention: Vec<attnbasin::harness::StrategyAttention>,
}

/// Orders one query under every strategy and compares the attention each
/// strategy gives relevant versus noise documents over repeated queries (only the random
/// strategy varies between them).
pub fn rerank_view(request: &str) -> Result<String, String> {
    let req: RerankRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
    let k = req.relevance.len();
    if req.scores.len() != k || k == 0 {
        return Err(format!(
            "profile has {} slots for {k} documents",
            req.scores.len()
        ));
    }
    let mut orders = Vec::new();
    for s in Strategy::ALL {
        let seed = (s == Strategy::Random).then_some(req.seed);
        let order = attnbasin::rerank::order_indices(&req.relevance, s, Some(&req.scores), seed)
            .map_err(|e| e.to_string())?;
        orders.push((s, order));
    }
    let mut ranked: Vec<usize> = (0..k).collect();
    ranked.sort_by(|&a, &b| req.relevance[b].total_cmp(&req.relevance[a]));
    let queries: Vec<Vec<LabeledDoc>> = (0..req.queries.max(1))
        .map(|_| {
            (0..k)
                .map(|d| LabeledDoc {
                    relevance: req.relevance[d],
                    relevant: ranked[..req.relevant.min(k)].contains(&d),
                })
                .collect()
        })
        .collect();
    let attention = strategy_attention_comparison(&req.scores, &queries, &Strategy::ALL, req.seed)
        .map_err(|e| e.to_string())?;
    serde_json::to_string(&RerankView { orders, attention }).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct SweepView {
    curve: Vec<f64>,
    best_slot: usize,
}

/// Expected answer probability of document `target` at every slot.
pub fn sweep_view(params: &DemoParams, target: usize, trials: usize) -> Result<String, String> {
    let p = params.params()?;
    let model = TheoryModel::new(p.k, p.layers);
    let curve = placement_sweep(&model, &p, target, trials.clamp(1, MAX_SAMPLES))
        .map_err(|e| e.to_string())?;
    let best_slot = (0..curve.len())
        .max_by(|&a, &b| curve[a].total_cmp(&curve[b]).then(b.cmp(&a)))
        .unwrap_or(0);
    serde_json::to_string(&SweepView { curve, best_slot }).map_err(|e| e.to_string())
}

fn parse(params: &str) -> Result<DemoParams, JsError> {
    serde_json::from_str(params).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn simulate_profile(params: &str) -> Result<String, JsError> {
    profile_view(&parse(params)?).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn compare_strategies(request: &str) -> Result<String, JsError> {
    rerank_view(request).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn placement_curve(params: &str, target: usize, trials: usize) -> Result<String, JsError> {
    sweep_view(&parse(params)?, target, trials).map_err(|e| JsError::new(&e))
}

/// Normalized scores of an arbitrary profile, for the page's manual editor.
#[wasm_bindgen]
pub fn normalize_profile(scores: &str) -> Result<String, JsError> {
    let scores: Vec<f64> =
        serde_json::from_str(scores).map_err(|e| JsError::new(&e.to_string()))?;
    let p = AttentionProfile::from_scores(scores);
    serde_json::to_string(&p.normalized()).map_err(|e| JsError::new(&e.to_string()))
}
