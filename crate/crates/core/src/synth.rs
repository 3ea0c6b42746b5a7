// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic attention dumps with a controllable basin.
//!
//! Slot `p` (1-based) of layer `l` receives attention mass
//! `max(0, f(p) + g(l) * sigma * eta)` with `eta ~ N(0, 1)` and
//!
//! ```text
//! f(p) = c + beta * ((2p - 1 - k) / (k - 1))^2
//! ```
//!
//! The mass is spread uniformly over the block's tokens. Whatever is left of
//! the row goes to the frame (template tokens plus the causally visible query
//! tokens); when the slot masses exceed 1 they are scaled down and the frame
//! gets nothing. Doc-slot attention in token-sum units is therefore exactly
//! `f(p) + noise` whenever the masses fit in the row.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dump::{AttentionDump, BlockSpan, DumpHeader, HeadMode, Spans, FORMAT_VERSION};
use crate::error::{Error, Result};

/// Independent stream `index` of `seed`. Trial and sample RNGs are derived
/// this way so results do not depend on execution order.
pub fn rng_for(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `g(l)` growing geometrically from 1 at the first layer to `factor` at the last.
pub fn geometric_growth(layers: usize, factor: f64) -> Vec<f64> {
    if layers <= 1 {
        return vec![1.0; layers];
    }
    (0..layers)
        .map(|l| factor.powf(l as f64 / (layers - 1) as f64))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBasinParams {
    pub k: usize,
    pub layers: usize,
    /// `c`, the floor of the positional bias.
    pub base: f64,
    /// `beta`, how much higher the edges sit than the centre.
    pub curvature: f64,
    /// `sigma`.
    pub noise_scale: f64,
    /// `g(l)`, one positive non-decreasing entry per layer.
    pub layer_noise_growth: Vec<f64>,
    pub tokens_per_block: usize,
    pub template_tokens: usize,
    pub query_tokens: usize,
    pub heads: usize,
    pub head_mode: HeadMode,
    pub seed: u64,
    pub model_id: String,
}

impl Default for SyntheticBasinParams {
    fn default() -> Self {
        Self::new(5, 8)
    }
}

impl SyntheticBasinParams {
    /// Defaults: `c = 0.1`, `beta = 0.1`, `sigma = 0.01`, noise growing 10x
    /// over depth, 32 tokens per block.
    pub fn new(k: usize, layers: usize) -> Self {
        Self {
            k,
            layers,
            base: 0.1,
            curvature: 0.1,
            noise_scale: 0.01,
            layer_noise_growth: geometric_growth(layers, 10.0),
            tokens_per_block: 32,
            template_tokens: 8,
            query_tokens: 4,
            heads: 1,
            head_mode: HeadMode::Mean,
            seed: 0,
            model_id: "synthetic".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("synthetic params", reason));
        if self.k == 0 || self.layers == 0 {
            return bad("k and layers must be positive".into());
        }
        if self.tokens_per_block == 0 || self.query_tokens == 0 || self.heads == 0 {
            return bad("tokens_per_block, query_tokens and heads must be positive".into());
        }
        for (name, v) in [
            ("base", self.base),
            ("curvature", self.curvature),
            ("noise_scale", self.noise_scale),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.layer_noise_growth.len() != self.layers {
            return bad(format!(
                "layer_noise_growth has {} entries for {} layers",
                self.layer_noise_growth.len(),
                self.layers
            ));
        }
        if self
            .layer_noise_growth
            .iter()
            .any(|g| !g.is_finite() || *g <= 0.0)
        {
            return bad("layer_noise_growth entries must be positive".into());
        }
        if self.layer_noise_growth.windows(2).any(|w| w[1] < w[0]) {
            return bad("layer_noise_growth must be non-decreasing".into());
        }
        if self.positional_bias().iter().any(|f| !(*f > 0.0)) {
            return bad("f(p) must be positive at every slot".into());
        }
        Ok(())
    }

    /// `f(p)` for every slot.
    pub fn positional_bias(&self) -> Vec<f64> {
        let k = self.k;
        (1..=k)
            .map(|p| {
                let x = if k > 1 {
                    (2.0 * p as f64 - 1.0 - k as f64) / (k as f64 - 1.0)
                } else {
                    0.0
                };
                self.base + self.curvature * x * x
            })
            .collect()
    }

    /// `f(p) / sum f`.
    pub fn expected_profile(&self) -> Vec<f64> {
        let f = self.positional_bias();
        let total: f64 = f.iter().sum();
        f.iter().map(|v| v / total).collect()
    }

    /// Population variance of `f` over slots.
    pub fn positional_variance(&self) -> f64 {
        let f = self.positional_bias();
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f.len() as f64
    }

    /// `g(l)^2 sigma^2 / (H V[f])`: the content-to-position variance ratio the
    /// generator is built to produce at each layer, ignoring clipping. Heads
    /// are averaged before aggregation, hence the `1/H`.
    pub fn analytic_rho(&self) -> Vec<f64> {
        let heads = self.heads as f64;
        let v = self.positional_variance();
        self.layer_noise_growth
            .iter()
            .map(|g| (g * self.noise_scale).powi(2) / (heads * v))
            .collect()
    }

    pub fn num_tokens(&self) -> usize {
        self.template_tokens + self.k * self.tokens_per_block + self.query_tokens
    }

    fn query_start(&self) -> usize {
        self.template_tokens + self.k * self.tokens_per_block
    }

    /// Slot masses of one (layer, head), already fitted into the row budget.
    fn draw_masses<R: Rng>(&self, rng: &mut R, f: &[f64], layer: usize) -> Vec<f64> {
        let scale = self.layer_noise_growth[layer] * self.noise_scale;
        let mut m: Vec<f64> = f
            .iter()
            .map(|&fp| {
                let eta: f64 = rng.sample(StandardNormal);
                (fp + scale * eta).max(0.0)
            })
            .collect();
        let total: f64 = m.iter().sum();
        if total > 1.0 {
            m.iter_mut().for_each(|v| *v /= total);
        }
        m
    }

    /// Head-averaged slot masses `[L][k]` of one draw, in token-sum units.
    pub fn draw_slot_attention<R: Rng>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        let f = self.positional_bias();
        (0..self.layers)
            .map(|layer| {
                let mut acc = vec![0.0; self.k];
                for _ in 0..self.heads {
                    for (a, m) in acc.iter_mut().zip(self.draw_masses(rng, &f, layer)) {
                        *a += m;
                    }
                }
                acc.iter_mut().for_each(|v| *v /= self.heads as f64);
                acc
            })
            .collect()
    }

    /// Full attention row (f64) for the query token at offset `r`.
    fn build_row(&self, masses: &[f64], r: usize) -> Vec<f64> {
        let t = self.num_tokens();
        let q0 = self.query_start();
        let mut row = vec![0.0; t];
        let frame = (1.0 - masses.iter().sum::<f64>()).max(0.0);
        let frame_tokens = self.template_tokens + r + 1;
        let per_frame = frame / frame_tokens as f64;
        row[..self.template_tokens].fill(per_frame);
        row[q0..=q0 + r].fill(per_frame);
        for (slot, &m) in masses.iter().enumerate() {
            let start = self.template_tokens + slot * self.tokens_per_block;
            row[start..start + self.tokens_per_block].fill(m / self.tokens_per_block as f64);
        }
        row
    }

    fn spans(&self, permutation: &[usize]) -> Spans {
        let template = if self.template_tokens > 0 {
            vec![BlockSpan::new("template", 0, self.template_tokens)]
        } else {
            vec![]
        };
        let docs = permutation
            .iter()
            .enumerate()
            .map(|(slot, doc)| {
                let start = self.template_tokens + slot * self.tokens_per_block;
                BlockSpan::new(format!("doc:{doc}"), start, start + self.tokens_per_block)
            })
            .collect();
        let q0 = self.query_start();
        Spans {
            template,
            docs,
            query: BlockSpan::new("query", q0, q0 + self.query_tokens),
        }
    }

    /// One dump, drawn from stream `index` of the seed.
    pub fn generate_one(&self, index: usize, permutation: &[usize]) -> Result<AttentionDump> {
        let mut rng = rng_for(self.seed, index as u64);
        let f = self.positional_bias();
        let t = self.num_tokens();
        let rows = self.query_tokens;
        let heads = self.heads;

        // [L][H][R][T] in f64, then quantized per head mode.
        let mut per_head: Vec<Vec<Vec<Vec<f64>>>> = Vec::with_capacity(self.layers);
        for layer in 0..self.layers {
            let mut layer_rows = Vec::with_capacity(heads);
            for _ in 0..heads {
                let masses = self.draw_masses(&mut rng, &f, layer);
                layer_rows.push((0..rows).map(|r| self.build_row(&masses, r)).collect());
            }
            per_head.push(layer_rows);
        }

        let mut tensor = Vec::new();
        match self.head_mode {
            HeadMode::PerHead => {
                for layer in &per_head {
                    for head in layer {
                        for (r, row) in head.iter().enumerate() {
                            quantize_row(row, self, r, &mut tensor);
                        }
                    }
                }
            }
            HeadMode::Mean => {
                for layer in &per_head {
                    for r in 0..rows {
                        let mut mean = vec![0.0; t];
                        for head in layer {
                            for (m, v) in mean.iter_mut().zip(&head[r]) {
                                *m += v;
                            }
                        }
                        mean.iter_mut().for_each(|v| *v /= heads as f64);
                        quantize_row(&mean, self, r, &mut tensor);
                    }
                }
            }
        }

        let q0 = self.query_start();
        let header = DumpHeader {
            format_version: FORMAT_VERSION,
            model_id: self.model_id.clone(),
            num_layers: self.layers,
            num_heads: heads,
            num_tokens: t,
            head_mode: self.head_mode,
            stored_rows: (q0..q0 + rows).collect(),
            spans: self.spans(permutation),
            sample_id: format!("sample-{index:06}"),
            permutation: permutation.to_vec(),
            disrupted: false,
        };
        AttentionDump::new(header, tensor)
    }
}

/// Appends `row` as f32, spreading each block's mass with error feedback so
/// the stored block totals stay within half an f32 ulp of the f64 totals.
fn quantize_row(row: &[f64], p: &SyntheticBasinParams, r: usize, out: &mut Vec<f32>) {
    let t = row.len();
    let mut q = vec![0.0f32; t];
    let q0 = p.query_start();
    let tpb = p.tokens_per_block;
    let mut spread = |indices: &mut dyn Iterator<Item = usize>, total: f64| {
        let idx: Vec<usize> = indices.collect();
        let n = idx.len() as f64;
        let mut stored = 0.0f64;
        for (i, &pos) in idx.iter().enumerate() {
            let target = total * (i + 1) as f64 / n;
            let v = ((target - stored) as f32).max(0.0);
            q[pos] = v;
            stored += f64::from(v);
        }
    };
    for slot in 0..p.k {
        let start = p.template_tokens + slot * tpb;
        let total: f64 = row[start..start + tpb].iter().sum();
        spread(&mut (start..start + tpb), total);
    }
    let frame_total: f64 =
        row[..p.template_tokens].iter().sum::<f64>() + row[q0..=q0 + r].iter().sum::<f64>();
    spread(&mut (0..p.template_tokens).chain(q0..=q0 + r), frame_total);
    out.extend_from_slice(&q);
}

/// `n_samples` dumps. Sample `i` uses `permutations[i % len]` when given,
/// the identity otherwise, and RNG stream `i` of `params.seed`.
pub fn generate_synthetic_dumps(
    params: &SyntheticBasinParams,
    n_samples: usize,
    permutations: Option<&[Vec<usize>]>,
) -> Result<Vec<AttentionDump>> {
    params.validate()?;
    let identity: Vec<usize> = (0..params.k).collect();
    if let Some(perms) = permutations {
        if perms.is_empty() {
            return Err(Error::invalid("permutations", "empty list"));
        }
        for perm in perms {
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            if sorted != identity {
                return Err(Error::invalid(
                    "permutations",
                    format!("{perm:?} is not a permutation of 0..{}", params.k),
                ));
            }
        }
    }
    (0..n_samples)
        .map(|i| {
            let perm = permutations.map_or(identity.as_slice(), |p| p[i % p.len()].as_slice());
            params.generate_one(i, perm)
        })
        .collect()
}

/// Seeded uniform permutations of `0..k`, one per sample.
pub fn random_permutations(k: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut rng = rng_for(seed, u64::MAX);
    (0..count)
        .map(|_| {
            let mut p: Vec<usize> = (0..k).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dump::validate_dump;

    #[test]
    fn bias_shape() {
        let p = SyntheticBasinParams::new(5, 2);
        let f = p.positional_bias();
        let want = [0.2, 0.125, 0.1, 0.125, 0.2];
        for (a, b) in f.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(f[0], f[4]);
    }

    #[test]
    fn invalid_params() {
        let mut p = SyntheticBasinParams::new(5, 3);
        p.base = 0.0;
        assert!(p.validate().is_err());
        let mut p = SyntheticBasinParams::new(5, 3);
        p.layer_noise_growth = vec![2.0, 1.0, 3.0];
        assert!(p.validate().is_err());
        let mut p = SyntheticBasinParams::new(5, 3);
        p.layer_noise_growth.pop();
        assert!(p.validate().is_err());
        assert!(generate_synthetic_dumps(&p, 1, None).is_err());
    }

    #[test]
    fn generated_dumps_validate() {
        let mut p = SyntheticBasinParams::new(4, 3);
        p.noise_scale = 0.05;
        p.heads = 2;
        let dumps = generate_synthetic_dumps(&p, 5, None).unwrap();
        for d in &dumps {
            let r = validate_dump(d, 1e-3);
            assert!(r.pass, "{r:?}");
            assert!(r.max_residual < 1e-6);
        }
    }

    #[test]
    fn frame_absorbs_remainder() {
        let mut p = SyntheticBasinParams::new(3, 1);
        p.noise_scale = 0.0;
        let d = p.generate_one(0, &[0, 1, 2]).unwrap();
        let row = d.row(0, 0, 0);
        let doc_mass: f64 = row[8..8 + 96].iter().map(|&v| f64::from(v)).sum();
        let f_total: f64 = p.positional_bias().iter().sum();
        assert!((doc_mass - f_total).abs() < 1e-7);
    }

    #[test]
    fn permutation_recorded() {
        let p = SyntheticBasinParams::new(3, 1);
        let perms = vec![vec![2, 0, 1]];
        let d = generate_synthetic_dumps(&p, 2, Some(&perms)).unwrap();
        assert_eq!(d[1].header.permutation, vec![2, 0, 1]);
        assert_eq!(d[1].header.spans.docs[0].label, "doc:2");
        assert!(generate_synthetic_dumps(&p, 1, Some(&[vec![0, 0, 1]])).is_err());
    }

    #[test]
    fn growth_is_geometric() {
        let g = geometric_growth(3, 100.0);
        assert!((g[1] - 10.0).abs() < 1e-9 && (g[2] - 100.0).abs() < 1e-9);
        assert_eq!(geometric_growth(1, 10.0), vec![1.0]);
    }
}
