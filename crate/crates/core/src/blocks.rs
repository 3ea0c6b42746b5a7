// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-block aggregation of query-row attention.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dump::{AttentionDump, BlockSpan};
use crate::error::{Error, Result};

/// How the keys of one block are reduced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Mean attention per key token of the block (length invariant).
    #[default]
    TokenMean,
    /// Total attention mass on the block.
    TokenSum,
}

impl AggregationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregationMode::TokenMean => "token_mean",
            AggregationMode::TokenSum => "token_sum",
        }
    }
}

impl std::str::FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token_mean" | "mean" => Ok(AggregationMode::TokenMean),
            "token_sum" | "sum" => Ok(AggregationMode::TokenSum),
            other => Err(Error::invalid("aggregation mode", other.to_string())),
        }
    }
}

/// Which stored query rows contribute.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowSelection {
    /// Uniform mean over every stored row.
    #[default]
    All,
    /// Only the last stored row (the final query token).
    Last,
}

impl std::str::FromStr for RowSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(RowSelection::All),
            "last" => Ok(RowSelection::Last),
            other => Err(Error::invalid("row selection", other.to_string())),
        }
    }
}

/// Attention per layer per document, columns keyed by original document index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockAttention {
    /// `[L][k]`.
    pub values: Vec<Vec<f64>>,
    /// Template pieces combined, one value per layer.
    pub template: Vec<f64>,
    /// Query span, one value per layer.
    pub query: Vec<f64>,
    pub mode: AggregationMode,
    pub sample_id: String,
    pub permutation: Vec<usize>,
}

impl BlockAttention {
    pub fn num_layers(&self) -> usize {
        self.values.len()
    }

    pub fn k(&self) -> usize {
        self.permutation.len()
    }

    /// Values of `layer` re-indexed to presentation slots.
    pub fn slot_values(&self, layer: usize) -> Vec<f64> {
        self.permutation
            .iter()
            .map(|&doc| self.values[layer][doc])
            .collect()
    }

    /// Total mass over every declared span at `layer`. Only meaningful for
    /// [`AggregationMode::TokenSum`], where it is bounded by the row budget.
    pub fn layer_total(&self, layer: usize) -> f64 {
        self.values[layer].iter().sum::<f64>() + self.template[layer] + self.query[layer]
    }
}

pub fn block_attention(dump: &AttentionDump, mode: AggregationMode) -> Result<BlockAttention> {
    block_attention_with(dump, mode, RowSelection::All)
}

pub fn block_attention_with(
    dump: &AttentionDump,
    mode: AggregationMode,
    rows: RowSelection,
) -> Result<BlockAttention> {
    let h = &dump.header;
    if h.stored_rows.is_empty() {
        return Err(Error::NoQueryRows);
    }
    let t = h.num_tokens;
    let check = |span: &BlockSpan| {
        if span.start >= span.end || span.end > t {
            Err(Error::invalid(
                "span",
                format!(
                    "{} [{}, {}) is empty or outside [0, {t})",
                    span.label, span.start, span.end
                ),
            ))
        } else {
            Ok(())
        }
    };
    h.spans.docs.iter().try_for_each(check)?;
    h.spans.template.iter().try_for_each(check)?;
    check(&h.spans.query)?;

    let k = h.k();
    let mut seen = vec![false; k];
    if h.permutation.len() != k
        || !h
            .permutation
            .iter()
            .all(|&p| p < k && !std::mem::replace(&mut seen[p], true))
    {
        return Err(Error::invalid(
            "permutation",
            format!("{:?} for k = {k}", h.permutation),
        ));
    }

    let selected: Vec<usize> = match rows {
        RowSelection::All => (0..h.num_rows()).collect(),
        RowSelection::Last => vec![h.num_rows() - 1],
    };
    let n_rows = selected.len() as f64;
    let template_len: usize = h.spans.template.iter().map(BlockSpan::len).sum();

    let reduce = |row: &[f64], span: &BlockSpan| -> f64 {
        let mass: f64 = row[span.start..span.end].iter().sum();
        match mode {
            AggregationMode::TokenSum => mass,
            AggregationMode::TokenMean => mass / span.len() as f64,
        }
    };

    let mut values = vec![vec![0.0; k]; h.num_layers];
    let mut template = vec![0.0; h.num_layers];
    let mut query = vec![0.0; h.num_layers];
    for layer in 0..h.num_layers {
        let mut slot_acc = vec![0.0; k];
        let mut tmpl_acc = 0.0;
        let mut query_acc = 0.0;
        for &r in &selected {
            let row = dump.head_mean_row(layer, r);
            for (acc, span) in slot_acc.iter_mut().zip(&h.spans.docs) {
                *acc += reduce(&row, span);
            }
            if template_len > 0 {
                let mass: f64 = h
                    .spans
                    .template
                    .iter()
                    .map(|s| row[s.start..s.end].iter().sum::<f64>())
                    .sum();
                tmpl_acc += match mode {
                    AggregationMode::TokenSum => mass,
                    AggregationMode::TokenMean => mass / template_len as f64,
                };
            }
            query_acc += reduce(&row, &h.spans.query);
        }
        for (slot, acc) in slot_acc.into_iter().enumerate() {
            values[layer][h.permutation[slot]] = acc / n_rows;
        }
        template[layer] = tmpl_acc / n_rows;
        query[layer] = query_acc / n_rows;
    }

    Ok(BlockAttention {
        values,
        template,
        query,
        mode,
        sample_id: h.sample_id.clone(),
        permutation: h.permutation.clone(),
    })
}

/// Elementwise mean of the selected layer rows. Duplicate indices count once.
pub fn cross_layer_mean(ba: &BlockAttention, layers: &[usize]) -> Result<Vec<f64>> {
    let set: BTreeSet<usize> = layers.iter().copied().collect();
    if set.is_empty() {
        return Err(Error::invalid("layer set", "empty"));
    }
    if let Some(&bad) = set.iter().find(|&&l| l >= ba.num_layers()) {
        return Err(Error::invalid(
            "layer set",
            format!("layer {bad} outside [0, {})", ba.num_layers()),
        ));
    }
    let mut out = vec![0.0; ba.values.first().map_or(0, Vec::len)];
    for &l in &set {
        for (acc, v) in out.iter_mut().zip(&ba.values[l]) {
            *acc += v;
        }
    }
    let n = set.len() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    Ok(out)
}

/// Block attention of many samples keyed by presentation slot: `[N, L, k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionStats {
    pub n_samples: usize,
    pub n_layers: usize,
    pub k: usize,
    pub mode: AggregationMode,
    data: Vec<f64>,
}

impl PositionStats {
    /// Builds stats from a dense `[N][L][k]` nest.
    pub fn from_nested(samples: &[Vec<Vec<f64>>], mode: AggregationMode) -> Result<Self> {
        let n = samples.len();
        let l = samples.first().map_or(0, Vec::len);
        let k = samples.first().and_then(|s| s.first()).map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * l * k);
        for (i, s) in samples.iter().enumerate() {
            if s.len() != l || s.iter().any(|row| row.len() != k) {
                return Err(Error::Shape(format!("sample {i} is not [{l}, {k}]")));
            }
            s.iter().for_each(|row| data.extend_from_slice(row));
        }
        Ok(Self {
            n_samples: n,
            n_layers: l,
            k,
            mode,
            data,
        })
    }

    pub fn get(&self, sample: usize, layer: usize, slot: usize) -> f64 {
        self.data[(sample * self.n_layers + layer) * self.k + slot]
    }

    /// The `[L, k]` matrix of one sample.
    pub fn sample(&self, sample: usize) -> Vec<Vec<f64>> {
        (0..self.n_layers)
            .map(|l| (0..self.k).map(|p| self.get(sample, l, p)).collect())
            .collect()
    }

    /// Scales every entry by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// Keeps the listed samples in the given order.
    pub fn select_samples(&self, order: &[usize]) -> Self {
        let stride = self.n_layers * self.k;
        let mut data = Vec::with_capacity(order.len() * stride);
        for &i in order {
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        Self {
            n_samples: order.len(),
            data,
            ..self.clone()
        }
    }
}

pub fn collect_position_stats(blocks: &[BlockAttention]) -> Result<PositionStats> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::invalid("position stats", "no samples"))?;
    let (l, k, mode) = (first.num_layers(), first.k(), first.mode);
    let mut nested = Vec::with_capacity(blocks.len());
    for ba in blocks {
        if ba.num_layers() != l || ba.k() != k || ba.mode != mode {
            return Err(Error::Shape(format!(
                "sample {} is [{}, {}] {:?}, expected [{l}, {k}] {mode:?}",
                ba.sample_id,
                ba.num_layers(),
                ba.k(),
                ba.mode
            )));
        }
        nested.push((0..l).map(|layer| ba.slot_values(layer)).collect());
    }
    PositionStats::from_nested(&nested, mode)
}
