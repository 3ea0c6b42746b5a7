// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use attnbasin::blocks::block_attention_with;
use attnbasin::dump::DEFAULT_TOLERANCE;
use attnbasin::layers::estimate_positional_bias_per_layer;
use attnbasin::{
    collect_position_stats, validate_dump, variance_ratio, AggregationMode, RowSelection,
};
use clap::Args;
use serde::{Deserialize, Serialize};

use super::{require, Ctx};
use crate::config::{resolve, with_config, CliResult};
use crate::fsio::{emit, list_dumps, par_map, pretty, read_dump_file};

/// Split slot-attention variance into positional and content parts per layer
#[derive(Args, Debug, Serialize)]
pub struct LayersArgs {
    /// Directory of .atnb dumps
    pub dumps: Option<PathBuf>,
    #[arg(long)]
    pub aggregation: Option<AggregationMode>,
    #[arg(long)]
    pub rows: Option<RowSelection>,
    /// Also report f_hat estimated per layer
    #[arg(long, default_missing_value = "true", num_args = 0..=1)]
    pub per_layer: Option<bool>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct LayersConfig {
    pub dumps: Option<PathBuf>,
    pub aggregation: AggregationMode,
    pub rows: RowSelection,
    pub per_layer: bool,
    pub tolerance: f64,
    pub out: Option<PathBuf>,
}

impl Default for LayersConfig {
    fn default() -> Self {
        Self {
            dumps: None,
            aggregation: AggregationMode::default(),
            rows: RowSelection::default(),
            per_layer: false,
            tolerance: DEFAULT_TOLERANCE,
            out: None,
        }
    }
}

pub fn run(args: &LayersArgs, ctx: &Ctx) -> CliResult<ExitCode> {
    let cfg: LayersConfig = resolve(&["layers"], args, ctx.file)?;
    let dir = require(cfg.dumps.as_ref(), "<DUMPS>", "for layers")?;
    let paths = list_dumps(dir)?;
    let (mode, rows, tol) = (cfg.aggregation, cfg.rows, cfg.tolerance);
    let blocks = par_map(ctx.jobs, &paths, |p| {
        let dump = read_dump_file(p)?;
        if !validate_dump(&dump, tol).pass {
            return Err(anyhow!("{}: dump fails validation", p.display()));
        }
        block_attention_with(&dump, mode, rows).with_context(|| format!("{}", p.display()))
    })?;
    let stats = collect_position_stats(&blocks)?;
    let mut report = variance_ratio(&stats)?;
    if cfg.per_layer {
        report.per_layer_f_hat = Some(estimate_positional_bias_per_layer(&stats)?);
    }
    emit(cfg.out.as_deref(), &pretty(&with_config(&report, &cfg)?))?;
    Ok(ExitCode::SUCCESS)
}
