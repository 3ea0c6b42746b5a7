// SPDX-License-Identifier: MIT OR Apache-2.0

//! Document ordering strategies.
//!
//! [`Strategy::Attnrank`] sends the i-th most relevant document to the slot
//! with the i-th highest profile score. The others are the usual baselines:
//! seeded shuffle, relevance descending/ascending, and the "sides-in"
//! interleave that puts the best documents at both ends.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiler::AttentionProfile;

/// One retrieved document. Wire form: `{"id", "score", "text"?}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub id: String,
    #[serde(rename = "score")]
    pub relevance: f64,
    #[serde(rename = "text", default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

impl ScoredDoc {
    pub fn new(id: impl Into<String>, relevance: f64) -> Self {
        Self {
            id: id.into(),
            relevance,
            payload: None,
        }
    }
}

/// Reads JSON-lines documents in retriever order. Blank lines are skipped.
pub fn read_docs_jsonl<R: BufRead>(reader: R) -> Result<Vec<ScoredDoc>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: ScoredDoc = serde_json::from_str(&line)
            .map_err(|e| Error::invalid("docs", format!("line {}: {e}", i + 1)))?;
        docs.push(doc);
    }
    Ok(docs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Attnrank,
    Random,
    Descending,
    Ascending,
    Lim,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Random,
        Strategy::Descending,
        Strategy::Ascending,
        Strategy::Lim,
        Strategy::Attnrank,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Attnrank => "attnrank",
            Strategy::Random => "random",
            Strategy::Descending => "descending",
            Strategy::Ascending => "ascending",
            Strategy::Lim => "lim",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::invalid("strategy", s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ordering {
    /// Document ids in presentation order, slot 1 first.
    pub ids: Vec<String>,
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Ordering {
    /// 1-based slot of every id.
    pub fn positions(&self) -> BTreeMap<String, usize> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i + 1))
            .collect()
    }

    pub fn to_output(&self, config: Option<serde_json::Value>) -> RerankOutput {
        RerankOutput {
            strategy: self.strategy,
            order: self.ids.clone(),
            positions: self.positions(),
            config,
        }
    }
}

/// Wire form of a reranking result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankOutput {
    pub strategy: Strategy,
    pub order: Vec<String>,
    pub positions: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RerankOptions {
    /// Linearly resample a profile whose length differs from the number of
    /// documents instead of failing. Off by default: profiles are measured
    /// at a fixed k.
    pub resample_profile: bool,
}

pub fn rerank(
    docs: &[ScoredDoc],
    strategy: Strategy,
    profile: Option<&AttentionProfile>,
    seed: Option<u64>,
) -> Result<Ordering> {
    rerank_with(docs, strategy, profile, seed, RerankOptions::default())
}

pub fn rerank_with(
    docs: &[ScoredDoc],
    strategy: Strategy,
    profile: Option<&AttentionProfile>,
    seed: Option<u64>,
    options: RerankOptions,
) -> Result<Ordering> {
    let mut seen = HashSet::new();
    for doc in docs {
        if !doc.relevance.is_finite() {
            return Err(Error::invalid(
                "document",
                format!("{} has non-finite relevance", doc.id),
            ));
        }
        if !seen.insert(doc.id.as_str()) {
            return Err(Error::invalid(
                "document",
                format!("duplicate id {}", doc.id),
            ));
        }
    }
    let relevance: Vec<f64> = docs.iter().map(|d| d.relevance).collect();
    let resampled;
    let scores = match profile {
        Some(p) if p.k() != docs.len() && options.resample_profile => {
            resampled = resample_profile(&p.scores, docs.len());
            Some(resampled.as_slice())
        }
        Some(p) => Some(p.scores.as_slice()),
        None => None,
    };
    let order = order_indices(&relevance, strategy, scores, seed)?;
    Ok(Ordering {
        ids: order.into_iter().map(|i| docs[i].id.clone()).collect(),
        strategy,
        seed: if strategy == Strategy::Random {
            seed
        } else {
            None
        },
    })
}

/// Input indices in presentation order.
pub fn order_indices(
    relevance: &[f64],
    strategy: Strategy,
    profile: Option<&[f64]>,
    seed: Option<u64>,
) -> Result<Vec<usize>> {
    let k = relevance.len();
    let by_relevance = || {
        let mut idx: Vec<usize> = (0..k).collect();
        // stable: ties keep retriever order
        idx.sort_by(|&a, &b| relevance[b].total_cmp(&relevance[a]));
        idx
    };
    match strategy {
        Strategy::Descending => Ok(by_relevance()),
        Strategy::Ascending => {
            let mut idx: Vec<usize> = (0..k).collect();
            idx.sort_by(|&a, &b| relevance[a].total_cmp(&relevance[b]));
            Ok(idx)
        }
        Strategy::Lim => {
            let ranked = by_relevance();
            let mut order = vec![0; k];
            for (rank, doc) in ranked.into_iter().enumerate() {
                let slot = if rank % 2 == 0 {
                    rank / 2
                } else {
                    k - 1 - rank / 2
                };
                order[slot] = doc;
            }
            Ok(order)
        }
        Strategy::Random => {
            let seed = seed.ok_or_else(|| Error::Missing("seed for random ordering".into()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx: Vec<usize> = (0..k).collect();
            idx.shuffle(&mut rng);
            Ok(idx)
        }
        Strategy::Attnrank => {
            let scores =
                profile.ok_or_else(|| Error::Missing("profile for attnrank ordering".into()))?;
            if scores.len() != k {
                return Err(Error::Shape(format!(
                    "profile has {} positions but {k} documents were given",
                    scores.len()
                )));
            }
            let slots = slots_by_attention(scores);
            let mut order = vec![0; k];
            for (doc, slot) in by_relevance().into_iter().zip(slots) {
                order[slot] = doc;
            }
            Ok(order)
        }
    }
}

/// Slots from highest to lowest profile score; ties go to the earlier slot.
pub fn slots_by_attention(scores: &[f64]) -> Vec<usize> {
    let mut slots: Vec<usize> = (0..scores.len()).collect();
    slots.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    slots
}

/// Linear interpolation of a profile onto `k` evenly spaced positions.
/// Not part of the profiling method itself; used only when the serving-time
/// document count differs from the profiled one.
pub fn resample_profile(scores: &[f64], k: usize) -> Vec<f64> {
    let n = scores.len();
    if n == 0 || k == 0 {
        return vec![0.0; k];
    }
    if k == 1 {
        return vec![scores.iter().sum::<f64>() / n as f64];
    }
    if n == 1 {
        return vec![scores[0]; k];
    }
    (0..k)
        .map(|i| {
            let x = i as f64 * (n - 1) as f64 / (k - 1) as f64;
            let lo = (x.floor() as usize).min(n - 2);
            let frac = x - lo as f64;
            scores[lo] * (1.0 - frac) + scores[lo + 1] * frac
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(pairs: &[(&str, f64)]) -> Vec<ScoredDoc> {
        pairs
            .iter()
            .map(|(id, s)| ScoredDoc::new(*id, *s))
            .collect()
    }

    fn ids(o: &Ordering) -> Vec<&str> {
        o.ids.iter().map(String::as_str).collect()
    }

    #[test]
    fn attnrank_maps_rank_to_attention() {
        let d = docs(&[("A", 0.9), ("B", 0.5), ("C", 0.1)]);
        let p = AttentionProfile::from_scores(vec![0.5, 0.2, 0.3]);
        let o = rerank(&d, Strategy::Attnrank, Some(&p), None).unwrap();
        assert_eq!(ids(&o), ["A", "C", "B"]);
        assert_eq!(o.positions()["B"], 3);
    }

    #[test]
    fn uniform_profile_matches_descending() {
        let d = docs(&[("A", 0.9), ("B", 0.5), ("C", 0.1)]);
        let p = AttentionProfile::from_scores(vec![0.2, 0.2, 0.2]);
        let o = rerank(&d, Strategy::Attnrank, Some(&p), None).unwrap();
        assert_eq!(ids(&o), ["A", "B", "C"]);
    }

    #[test]
    fn lim_sides_in() {
        let d = docs(&[("1", 5.0), ("2", 4.0), ("3", 3.0), ("4", 2.0), ("5", 1.0)]);
        let o = rerank(&d, Strategy::Lim, None, None).unwrap();
        assert_eq!(ids(&o), ["1", "3", "5", "4", "2"]);
    }

    #[test]
    fn descending_and_ascending_are_stable() {
        let d = docs(&[("a", 0.5), ("b", 0.9), ("c", 0.5)]);
        let desc = rerank(&d, Strategy::Descending, None, None).unwrap();
        assert_eq!(ids(&desc), ["b", "a", "c"]);
        let asc = rerank(&d, Strategy::Ascending, None, None).unwrap();
        assert_eq!(ids(&asc), ["a", "c", "b"]);
    }

    #[test]
    fn single_doc_identity() {
        let d = docs(&[("only", 0.3)]);
        let p = AttentionProfile::from_scores(vec![1.0]);
        for s in Strategy::ALL {
            let o = rerank(&d, s, Some(&p), Some(3)).unwrap();
            assert_eq!(ids(&o), ["only"]);
        }
    }

    #[test]
    fn error_paths() {
        let d = docs(&[("A", 0.9), ("B", 0.5)]);
        assert!(matches!(
            rerank(&d, Strategy::Attnrank, None, None),
            Err(Error::Missing(_))
        ));
        let p = AttentionProfile::from_scores(vec![0.5, 0.2, 0.3]);
        assert!(matches!(
            rerank(&d, Strategy::Attnrank, Some(&p), None),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            rerank(&d, Strategy::Random, None, None),
            Err(Error::Missing(_))
        ));
        let dup = docs(&[("A", 0.9), ("A", 0.5)]);
        assert!(rerank(&dup, Strategy::Descending, None, None).is_err());
    }

    #[test]
    fn resample_fallback() {
        let d = docs(&[("A", 0.9), ("B", 0.5), ("C", 0.1)]);
        let p = AttentionProfile::from_scores(vec![0.5, 0.1, 0.2, 0.1, 0.4]);
        let opts = RerankOptions {
            resample_profile: true,
        };
        let o = rerank_with(&d, Strategy::Attnrank, Some(&p), None, opts).unwrap();
        // resampled to [0.5, 0.2, 0.4]
        assert_eq!(ids(&o), ["A", "C", "B"]);
        assert_eq!(resample_profile(&[1.0, 3.0], 3), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn random_is_seeded() {
        let d: Vec<ScoredDoc> = (0..10)
            .map(|i| ScoredDoc::new(i.to_string(), i as f64))
            .collect();
        let a = rerank(&d, Strategy::Random, None, Some(11)).unwrap();
        let b = rerank(&d, Strategy::Random, None, Some(11)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seed, Some(11));
    }

    #[test]
    fn jsonl_reading() {
        let text = "{\"id\":\"a\",\"score\":0.3}\n\n{\"id\":\"b\",\"score\":0.7,\"text\":\"x\"}\n";
        let d = read_docs_jsonl(text.as_bytes()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[1].payload.as_deref(), Some("x"));
        assert!(read_docs_jsonl("{\"id\":1}".as_bytes()).is_err());
    }
}
