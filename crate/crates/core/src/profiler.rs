// SPDX-License-Identifier: MIT OR Apache-2.0

//! Positional attention profiles: the per-slot average of block attention
//! paid by the query tokens over a set of probe samples.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::blocks::{AggregationMode, BlockAttention};
use crate::error::{Error, Result};

pub const PROFILE_FORMAT_VERSION: u32 = 1;

pub const DEFAULT_CHECKPOINT_EVERY: usize = 50;
pub const DEFAULT_TAU: f64 = 1e-4;
pub const DEFAULT_PATIENCE: usize = 2;

/// Which layer(s) feed the profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerSelection {
    Layer(usize),
    CrossLayerMean,
}

impl Default for LayerSelection {
    /// The shallowest attention layer.
    fn default() -> Self {
        LayerSelection::Layer(0)
    }
}

const CROSS_LAYER_MEAN: &str = "cross-layer-mean";

impl fmt::Display for LayerSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSelection::Layer(l) => write!(f, "{l}"),
            LayerSelection::CrossLayerMean => f.write_str(CROSS_LAYER_MEAN),
        }
    }
}

impl std::str::FromStr for LayerSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == CROSS_LAYER_MEAN || s == "mean" || s == "all" {
            return Ok(LayerSelection::CrossLayerMean);
        }
        s.parse()
            .map(LayerSelection::Layer)
            .map_err(|_| Error::invalid("layer selection", s.to_string()))
    }
}

impl Serialize for LayerSelection {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LayerSelection::Layer(l) => s.serialize_u64(*l as u64),
            LayerSelection::CrossLayerMean => s.serialize_str(CROSS_LAYER_MEAN),
        }
    }
}

impl<'de> Deserialize<'de> for LayerSelection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(usize),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(l) => Ok(LayerSelection::Layer(l)),
            Raw::Name(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl LayerSelection {
    /// Slot-keyed scores of one sample under this selection.
    pub fn slot_scores(self, ba: &BlockAttention) -> Result<Vec<f64>> {
        let layers = ba.num_layers();
        match self {
            LayerSelection::Layer(l) if l < layers => Ok(ba.slot_values(l)),
            LayerSelection::Layer(l) => Err(Error::invalid(
                "layer selection",
                format!("layer {l} outside [0, {layers})"),
            )),
            LayerSelection::CrossLayerMean => {
                let mut out = vec![0.0; ba.k()];
                for l in 0..layers {
                    for (acc, v) in out.iter_mut().zip(ba.slot_values(l)) {
                        *acc += v;
                    }
                }
                out.iter_mut().for_each(|v| *v /= layers as f64);
                Ok(out)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub n: usize,
    pub snapshot: Vec<f64>,
}

/// Running sum of slot scores. Single writer; shard and [`merge`](Self::merge)
/// for parallel profiling.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileAccumulator {
    pub k: usize,
    pub layer_selection: LayerSelection,
    pub mode: AggregationMode,
    pub checkpoint_every: usize,
    sum: Vec<f64>,
    n: usize,
    checkpoints: Vec<Checkpoint>,
}

impl ProfileAccumulator {
    pub fn new(
        k: usize,
        layer_selection: LayerSelection,
        mode: AggregationMode,
        checkpoint_every: usize,
    ) -> Self {
        Self {
            k,
            layer_selection,
            mode,
            checkpoint_every: checkpoint_every.max(1),
            sum: vec![0.0; k],
            n: 0,
            checkpoints: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sum(&self) -> &[f64] {
        &self.sum
    }

    pub fn checkpoints(&self) -> &[Checkpoint] {
        &self.checkpoints
    }

    /// Current running mean (zeros when empty).
    pub fn mean(&self) -> Vec<f64> {
        if self.n == 0 {
            return vec![0.0; self.k];
        }
        let n = self.n as f64;
        self.sum.iter().map(|s| s / n).collect()
    }

    /// Adds one sample's slot-keyed scores.
    pub fn accumulate(&mut self, doc_scores: &[f64]) -> Result<()> {
        if doc_scores.len() != self.k {
            return Err(Error::Shape(format!(
                "expected {} slot scores, got {}",
                self.k,
                doc_scores.len()
            )));
        }
        for (acc, v) in self.sum.iter_mut().zip(doc_scores) {
            *acc += v;
        }
        self.n += 1;
        if self.n.is_multiple_of(self.checkpoint_every) {
            self.checkpoints.push(Checkpoint {
                n: self.n,
                snapshot: self.mean(),
            });
        }
        Ok(())
    }

    /// Adds one sample, selecting layers and re-indexing to slots first.
    pub fn accumulate_blocks(&mut self, ba: &BlockAttention) -> Result<()> {
        if ba.mode != self.mode {
            return Err(Error::Shape(format!(
                "sample {} aggregated as {:?}, accumulator expects {:?}",
                ba.sample_id, ba.mode, self.mode
            )));
        }
        let scores = self.layer_selection.slot_scores(ba)?;
        self.accumulate(&scores)
    }

    /// Combines two shards. Sums and counts add; the checkpoint history of
    /// `self` is kept and `other`'s is dropped, since its snapshots were taken
    /// over a different prefix of the sample stream.
    pub fn merge(mut self, other: ProfileAccumulator) -> Result<Self> {
        if self.k != other.k
            || self.layer_selection != other.layer_selection
            || self.mode != other.mode
        {
            return Err(Error::invalid(
                "merge",
                format!(
                    "incompatible accumulators (k {} vs {}, {} vs {}, {:?} vs {:?})",
                    self.k,
                    other.k,
                    self.layer_selection,
                    other.layer_selection,
                    self.mode,
                    other.mode
                ),
            ));
        }
        if self.n == 0 {
            let checkpoint_every = self.checkpoint_every;
            self = other;
            self.checkpoint_every = checkpoint_every;
            return Ok(self);
        }
        for (acc, v) in self.sum.iter_mut().zip(&other.sum) {
            *acc += v;
        }
        self.n += other.n;
        Ok(self)
    }

    /// `(n, max_j |a_j(n) - a_j(n - C)|)` between successive checkpoints.
    pub fn convergence_history(&self) -> Vec<(usize, f64)> {
        self.checkpoints
            .windows(2)
            .map(|w| {
                let delta = w[0]
                    .snapshot
                    .iter()
                    .zip(&w[1].snapshot)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                (w[1].n, delta)
            })
            .collect()
    }

    pub fn finalize(&self, model_id: impl Into<String>) -> Result<AttentionProfile> {
        if self.n == 0 {
            return Err(Error::EmptyProfile);
        }
        Ok(AttentionProfile {
            scores: self.mean(),
            n_samples: self.n,
            layer_selection: self.layer_selection,
            mode: self.mode,
            convergence_history: self.convergence_history(),
            model_id: model_id.into(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub n_star: Option<usize>,
}

/// Converged at the first checkpoint that completes a run of `patience`
/// consecutive checkpoint deltas below `tau`.
pub fn check_convergence(acc: &ProfileAccumulator, tau: f64, patience: usize) -> Convergence {
    let patience = patience.max(1);
    let mut run = 0;
    for (n, delta) in acc.convergence_history() {
        if delta < tau {
            run += 1;
            if run >= patience {
                return Convergence {
                    converged: true,
                    n_star: Some(n),
                };
            }
        } else {
            run = 0;
        }
    }
    Convergence {
        converged: false,
        n_star: None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionProfile {
    pub scores: Vec<f64>,
    pub n_samples: usize,
    pub layer_selection: LayerSelection,
    pub mode: AggregationMode,
    pub convergence_history: Vec<(usize, f64)>,
    pub model_id: String,
}

impl AttentionProfile {
    /// A bare profile, e.g. one typed in by hand.
    pub fn from_scores(scores: Vec<f64>) -> Self {
        Self {
            scores,
            n_samples: 1,
            layer_selection: LayerSelection::default(),
            mode: AggregationMode::default(),
            convergence_history: Vec::new(),
            model_id: String::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.scores.len()
    }

    /// Scores divided by their sum.
    pub fn normalized(&self) -> Vec<f64> {
        let total: f64 = self.scores.iter().sum();
        self.scores.iter().map(|s| s / total).collect()
    }

    pub fn to_file(&self, config: Option<serde_json::Value>) -> ProfileFile {
        ProfileFile {
            format_version: PROFILE_FORMAT_VERSION,
            model_id: self.model_id.clone(),
            k: self.k(),
            n_samples: self.n_samples,
            layer_selection: self.layer_selection,
            aggregation: self.mode,
            scores: self.scores.clone(),
            convergence_history: self.convergence_history.clone(),
            basin: detect_basin(self).ok(),
            config,
        }
    }
}

/// On-disk form of a profile (`.profile.json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileFile {
    pub format_version: u32,
    pub model_id: String,
    pub k: usize,
    pub n_samples: usize,
    pub layer_selection: LayerSelection,
    pub aggregation: AggregationMode,
    pub scores: Vec<f64>,
    pub convergence_history: Vec<(usize, f64)>,
    pub basin: Option<BasinReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl ProfileFile {
    pub fn into_profile(self) -> Result<AttentionProfile> {
        if self.format_version != PROFILE_FORMAT_VERSION {
            return Err(Error::Version {
                found: self.format_version,
                expected: PROFILE_FORMAT_VERSION,
            });
        }
        if self.scores.len() != self.k {
            return Err(Error::invalid(
                "profile",
                format!("k = {} but {} scores", self.k, self.scores.len()),
            ));
        }
        if self.scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::invalid("profile", "scores must be finite and >= 0"));
        }
        Ok(AttentionProfile {
            scores: self.scores,
            n_samples: self.n_samples,
            layer_selection: self.layer_selection,
            mode: self.aggregation,
            convergence_history: self.convergence_history,
            model_id: self.model_id,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasinReport {
    pub is_basin: bool,
    /// `min(a_1, a_k)`.
    pub edge_min: f64,
    /// Mean of the interior slots.
    pub middle_mean: f64,
    /// `(edge_min - middle_mean) / mean(A)`.
    pub depth: f64,
    /// 0-based slot of the smallest score (first on ties).
    pub argmin_slot: usize,
}

/// A basin needs both edges above the interior mean and the minimum strictly
/// inside.
pub fn detect_basin(profile: &AttentionProfile) -> Result<BasinReport> {
    basin_of(&profile.scores)
}

pub fn basin_of(scores: &[f64]) -> Result<BasinReport> {
    let k = scores.len();
    if k < 3 {
        return Err(Error::BasinUndefined(k));
    }
    let mean = scores.iter().sum::<f64>() / k as f64;
    if !(mean > 0.0) {
        return Err(Error::invalid("profile", "mean score must be positive"));
    }
    let edge_min = scores[0].min(scores[k - 1]);
    let middle_mean = scores[1..k - 1].iter().sum::<f64>() / (k - 2) as f64;
    let argmin_slot = scores
        .iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |best, (i, &v)| if v < best.1 { (i, v) } else { best },
        )
        .0;
    Ok(BasinReport {
        is_basin: edge_min > middle_mean && argmin_slot != 0 && argmin_slot != k - 1,
        edge_min,
        middle_mean,
        depth: (edge_min - middle_mean) / mean,
        argmin_slot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acc(k: usize, c: usize) -> ProfileAccumulator {
        ProfileAccumulator::new(k, LayerSelection::Layer(0), AggregationMode::TokenMean, c)
    }

    #[test]
    fn accumulate_and_finalize() {
        let mut a = acc(3, 50);
        a.accumulate(&[0.2, 0.1, 0.3]).unwrap();
        assert_eq!(a.n(), 1);
        assert_eq!(a.sum(), &[0.2, 0.1, 0.3]);
        a.accumulate(&[0.4, 0.1, 0.1]).unwrap();
        let p = a.finalize("m").unwrap();
        for (x, y) in p.scores.iter().zip([0.3, 0.1, 0.2]) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(a.accumulate(&[1.0]).is_err());
    }

    #[test]
    fn finalize_divides_by_n() {
        let mut a = acc(3, 50);
        a.accumulate(&[0.2, 0.1, 0.3]).unwrap();
        assert_eq!(a.finalize("").unwrap().scores, vec![0.2, 0.1, 0.3]);

        let mut b = acc(3, 50);
        for _ in 0..4 {
            b.accumulate(&[0.1, 0.2, 0.1]).unwrap();
        }
        let p = b.finalize("").unwrap();
        for (x, y) in p.scores.iter().zip([0.1, 0.2, 0.1]) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(matches!(acc(3, 50).finalize(""), Err(Error::EmptyProfile)));
    }

    #[test]
    fn merge_identity_and_commutativity() {
        let mut a = acc(2, 50);
        a.accumulate(&[0.2, 0.8]).unwrap();
        a.accumulate(&[0.6, 0.4]).unwrap();
        let mut b = acc(2, 50);
        b.accumulate(&[0.3, 0.3]).unwrap();

        let same = a.clone().merge(acc(2, 50)).unwrap();
        assert_eq!(same, a);

        let ab = a.clone().merge(b.clone()).unwrap().finalize("").unwrap();
        let ba = b.merge(a).unwrap().finalize("").unwrap();
        for (x, y) in ab.scores.iter().zip(&ba.scores) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn merge_rejects_incompatible() {
        let a = acc(2, 50);
        let b = ProfileAccumulator::new(
            2,
            LayerSelection::CrossLayerMean,
            AggregationMode::TokenMean,
            50,
        );
        assert!(a.clone().merge(b).is_err());
        assert!(a.merge(acc(3, 50)).is_err());
    }

    #[test]
    fn constant_stream_converges_at_150() {
        let mut a = acc(3, 50);
        for _ in 0..400 {
            a.accumulate(&[0.3, 0.1, 0.2]).unwrap();
        }
        let c = check_convergence(&a, 1e-4, 2);
        assert!(c.converged);
        assert_eq!(c.n_star, Some(150));
    }

    #[test]
    fn alternating_stream_never_converges() {
        let mut a = acc(2, 50);
        for block in 0..20 {
            let v = if block % 2 == 0 {
                [1.0, 0.0]
            } else {
                [0.0, 1.0]
            };
            for _ in 0..50 {
                a.accumulate(&v).unwrap();
            }
        }
        let c = check_convergence(&a, 1e-4, 2);
        assert!(!c.converged);
        assert_eq!(c.n_star, None);
    }

    #[test]
    fn too_few_checkpoints() {
        let mut a = acc(2, 50);
        for _ in 0..60 {
            a.accumulate(&[0.5, 0.5]).unwrap();
        }
        assert!(!check_convergence(&a, 1e-4, 1).converged);
    }

    #[test]
    fn basin_cases() {
        let b = basin_of(&[0.5, 0.1, 0.4]).unwrap();
        assert!(b.is_basin);
        assert!((b.depth - 0.9).abs() < 1e-12);
        assert_eq!(b.argmin_slot, 1);

        let b = basin_of(&[0.1, 0.5, 0.2]).unwrap();
        assert!(!b.is_basin);
        assert_eq!(b.argmin_slot, 0);

        assert!(!basin_of(&[0.3, 0.3, 0.3]).unwrap().is_basin);
        assert!(matches!(
            basin_of(&[0.3, 0.3]),
            Err(Error::BasinUndefined(2))
        ));
        assert!(basin_of(&[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn layer_selection_serde() {
        let v = serde_json::to_value(LayerSelection::Layer(3)).unwrap();
        assert_eq!(v, serde_json::json!(3));
        let v = serde_json::to_value(LayerSelection::CrossLayerMean).unwrap();
        assert_eq!(v, serde_json::json!("cross-layer-mean"));
        let back: LayerSelection = serde_json::from_value(v).unwrap();
        assert_eq!(back, LayerSelection::CrossLayerMean);
    }

    #[test]
    fn profile_file_round_trip() {
        let mut a = acc(3, 1);
        a.accumulate(&[0.5, 0.1, 0.4]).unwrap();
        a.accumulate(&[0.1 + 0.2, 0.1, 1.0 / 3.0]).unwrap();
        let p = a.finalize("m").unwrap();
        let text = serde_json::to_string(&p.to_file(None)).unwrap();
        let back: ProfileFile = serde_json::from_str(&text).unwrap();
        assert!(back.basin.as_ref().unwrap().is_basin);
        assert_eq!(back.into_profile().unwrap(), p);
    }
}
