// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic-generator flags shared by `simulate`, `theory sweep` and `permute`.

use attnbasin::synth::geometric_growth;
use attnbasin::{HeadMode, SyntheticBasinParams};
use clap::Args;
use serde::{Deserialize, Serialize};

#[derive(Args, Debug, Serialize)]
pub struct GeneratorArgs {
    /// Number of documents (slots)
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of attention layers
    #[arg(long)]
    pub layers: Option<usize>,
    /// Floor c of f(p) = c + beta * x(p)^2
    #[arg(long)]
    pub base: Option<f64>,
    /// Curvature beta of f(p)
    #[arg(long)]
    pub curvature: Option<f64>,
    /// Per-slot noise scale sigma at the first layer
    #[arg(long)]
    pub noise_scale: Option<f64>,
    /// Geometric growth of the noise scale from first to last layer
    #[arg(long)]
    pub growth_factor: Option<f64>,
    /// Explicit per-layer noise multipliers g(l); overrides --growth-factor
    #[arg(long, value_delimiter = ',')]
    pub layer_noise_growth: Option<Vec<f64>>,
    #[arg(long)]
    pub tokens_per_block: Option<usize>,
    #[arg(long)]
    pub template_tokens: Option<usize>,
    #[arg(long)]
    pub query_tokens: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// mean or per_head
    #[arg(long)]
    pub head_mode: Option<HeadMode>,
    #[arg(long)]
    pub model_id: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub k: usize,
    pub layers: usize,
    pub base: f64,
    pub curvature: f64,
    pub noise_scale: f64,
    pub growth_factor: f64,
    pub layer_noise_growth: Option<Vec<f64>>,
    pub tokens_per_block: usize,
    pub template_tokens: usize,
    pub query_tokens: usize,
    pub heads: usize,
    pub head_mode: HeadMode,
    pub model_id: String,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::from_params(&SyntheticBasinParams::new(5, 8), 10.0)
    }
}

impl GeneratorConfig {
    fn from_params(p: &SyntheticBasinParams, growth_factor: f64) -> Self {
        Self {
            k: p.k,
            layers: p.layers,
            base: p.base,
            curvature: p.curvature,
            noise_scale: p.noise_scale,
            growth_factor,
            layer_noise_growth: None,
            tokens_per_block: p.tokens_per_block,
            template_tokens: p.template_tokens,
            query_tokens: p.query_tokens,
            heads: p.heads,
            head_mode: p.head_mode,
            model_id: p.model_id.clone(),
        }
    }

    pub fn params(&self, seed: u64) -> attnbasin::Result<SyntheticBasinParams> {
        let params = SyntheticBasinParams {
            k: self.k,
            layers: self.layers,
            base: self.base,
            curvature: self.curvature,
            noise_scale: self.noise_scale,
            layer_noise_growth: self
                .layer_noise_growth
                .clone()
                .unwrap_or_else(|| geometric_growth(self.layers, self.growth_factor)),
            tokens_per_block: self.tokens_per_block,
            template_tokens: self.template_tokens,
            query_tokens: self.query_tokens,
            heads: self.heads,
            head_mode: self.head_mode,
            seed,
            model_id: self.model_id.clone(),
        };
        params.validate()?;
        Ok(params)
    }
}
