// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use attnbasin::blocks::block_attention_with;
use attnbasin::harness::{permutation_experiment, GroupingRule, SlotAttentionSource};
use attnbasin::{AggregationMode, RowSelection, TheoryModel};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use super::generator::{GeneratorArgs, GeneratorConfig};
use super::{require, Ctx};
use crate::config::{resolve, usage, with_config, CliResult};
use crate::fsio::{emit, list_dumps, par_map, pretty, read_dump_file};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Table,
    Csv,
}

/// Evaluate every ordering of a small document set
#[derive(Args, Debug, Serialize)]
pub struct PermuteArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub generator: GeneratorArgs,
    /// Indices of the relevant documents, e.g. 0,2
    #[arg(long, value_delimiter = ',')]
    pub relevant: Option<Vec<usize>>,
    /// Take slot attention from these dumps instead of the generator
    #[arg(long)]
    pub dumps: Option<PathBuf>,
    #[arg(long)]
    pub aggregation: Option<AggregationMode>,
    #[arg(long)]
    pub rows: Option<RowSelection>,
    /// max or sum
    #[arg(long)]
    pub rule: Option<GroupingRule>,
    /// Generator draws averaged per ordering
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub format: Option<Format>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PermuteConfig {
    #[serde(flatten)]
    pub generator: GeneratorConfig,
    pub relevant: Vec<usize>,
    pub dumps: Option<PathBuf>,
    pub aggregation: AggregationMode,
    pub rows: RowSelection,
    pub rule: GroupingRule,
    pub draws: usize,
    pub seed: Option<u64>,
    pub format: Format,
    pub out: Option<PathBuf>,
}

impl Default for PermuteConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            relevant: vec![0, 1],
            dumps: None,
            aggregation: AggregationMode::default(),
            rows: RowSelection::default(),
            rule: GroupingRule::default(),
            draws: 20,
            seed: None,
            format: Format::Json,
            out: None,
        }
    }
}

fn labels(k: usize, relevant: &[usize]) -> CliResult<Vec<bool>> {
    let mut out = vec![false; k];
    for &r in relevant {
        if r >= k {
            return Err(usage(format!("--relevant index {r} outside [0, {k})")));
        }
        out[r] = true;
    }
    Ok(out)
}

pub fn run(args: &PermuteArgs, ctx: &Ctx) -> CliResult<ExitCode> {
    let cfg: PermuteConfig = resolve(&["permute"], args, ctx.file)?;
    let report = match &cfg.dumps {
        Some(dir) => {
            let paths = list_dumps(dir)?;
            let (mode, rows) = (cfg.aggregation, cfg.rows);
            let blocks = par_map(ctx.jobs, &paths, |p| {
                block_attention_with(&read_dump_file(p)?, mode, rows)
                    .with_context(|| format!("{}", p.display()))
            })?;
            let (k, layers) = (blocks[0].k(), blocks[0].num_layers());
            let labels = labels(k, &cfg.relevant)?;
            permutation_experiment(
                SlotAttentionSource::Dumps(&blocks),
                &labels,
                &TheoryModel::new(k, layers),
                cfg.rule,
            )?
        }
        None => {
            let seed = require(cfg.seed, "--seed", "for generator-driven permute")?;
            let params = cfg
                .generator
                .params(seed)
                .map_err(|e| usage(e.to_string()))?;
            let labels = labels(params.k, &cfg.relevant)?;
            permutation_experiment(
                SlotAttentionSource::Generator {
                    params: &params,
                    draws: cfg.draws,
                },
                &labels,
                &TheoryModel::new(params.k, params.layers),
                cfg.rule,
            )
            .map_err(|e| usage(e.to_string()))?
        }
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let text = match cfg.format {
        Format::Json => pretty(&with_config(&report, &cfg)?),
        Format::Table => report.to_table(),
        Format::Csv => report.to_csv(),
    };
    emit(cfg.out.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}
