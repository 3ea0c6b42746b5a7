// SPDX-License-Identifier: MIT OR Apache-2.0

//! Positional attention profiling over structured context blocks.
//!
//! The crate is organised around the life of an attention dump:
//!
//! - [`dump`] reads, writes and validates `.atnb` files (query-row attention
//!   plus block span metadata).
//! - [`blocks`] aggregates raw rows into per-layer, per-block attention.
//! - [`profiler`] averages block attention over probe samples into a
//!   positional profile and detects the U-shaped "basin".
//! - [`rerank`] maps relevance rank onto profile rank (AttnRank) and provides
//!   the usual ordering baselines.
//! - [`layers`] splits attention variance into positional and content parts
//!   per layer and finds the regime threshold.
//! - [`theory`] is a small orthogonal-embedding logit model used to check the
//!   attention/probability monotonicity claims numerically.
//! - [`synth`] generates dumps with a controllable basin.
//! - [`harness`] runs the permutation and layer-wise reranking experiments.

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blocks;
pub mod dump;
pub mod error;
pub mod harness;
pub mod layers;
pub mod profiler;
pub mod rerank;
pub mod synth;
pub mod theory;

pub use blocks::{
    block_attention, collect_position_stats, cross_layer_mean, AggregationMode, BlockAttention,
    PositionStats, RowSelection,
};
pub use dump::{
    read_dump, validate_dump, write_dump, AttentionDump, BlockSpan, DumpHeader, HeadMode, Spans,
    ValidationReport,
};
pub use error::{Error, Result};
pub use layers::{
    estimate_positional_bias, find_regime_threshold, variance_ratio, LayerRegimeReport,
};
pub use profiler::{
    check_convergence, detect_basin, AttentionProfile, BasinReport, LayerSelection,
    ProfileAccumulator,
};
pub use rerank::{rerank, Ordering, ScoredDoc, Strategy};
pub use synth::{generate_synthetic_dumps, SyntheticBasinParams};
pub use theory::{answer_distribution, attention_gradient, TheoryModel};
