// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use attnbasin::blocks::block_attention_with;
use attnbasin::dump::DEFAULT_TOLERANCE;
use attnbasin::profiler::{ProfileFile, DEFAULT_CHECKPOINT_EVERY, DEFAULT_PATIENCE, DEFAULT_TAU};
use attnbasin::{
    check_convergence, detect_basin, validate_dump, AggregationMode, LayerSelection,
    ProfileAccumulator, RowSelection,
};
use clap::Args;
use serde::{Deserialize, Serialize};

use super::{require, Ctx};
use crate::config::{resolve, usage, with_config, CliResult};
use crate::fsio::{emit, list_dumps, par_map, pretty, read_json};

/// Average slot attention over a directory of dumps
#[derive(Args, Debug, Serialize)]
pub struct ProfileArgs {
    /// Directory of .atnb dumps (or a single dump)
    pub dumps: Option<PathBuf>,
    /// Write the profile here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Layer index, or cross-layer-mean
    #[arg(long)]
    pub layer: Option<LayerSelection>,
    /// token_mean or token_sum
    #[arg(long)]
    pub aggregation: Option<AggregationMode>,
    /// Query rows to average: all or last
    #[arg(long)]
    pub rows: Option<RowSelection>,
    /// Samples between convergence checkpoints
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Convergence threshold on the checkpoint-to-checkpoint change
    #[arg(long)]
    pub tau: Option<f64>,
    /// Consecutive checkpoints below tau needed to call convergence
    #[arg(long)]
    pub patience: Option<usize>,
    /// Row-normalization tolerance applied to every input dump
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Overrides the model id taken from the dumps
    #[arg(long)]
    pub model_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileConfig {
    pub dumps: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub layer: LayerSelection,
    pub aggregation: AggregationMode,
    pub rows: RowSelection,
    pub checkpoint_every: usize,
    pub tau: f64,
    pub patience: usize,
    pub tolerance: f64,
    pub model_id: Option<String>,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            dumps: None,
            out: None,
            layer: LayerSelection::default(),
            aggregation: AggregationMode::default(),
            rows: RowSelection::default(),
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
            tau: DEFAULT_TAU,
            patience: DEFAULT_PATIENCE,
            tolerance: DEFAULT_TOLERANCE,
            model_id: None,
        }
    }
}

pub fn run(args: &ProfileArgs, ctx: &Ctx) -> CliResult<ExitCode> {
    let cfg: ProfileConfig = resolve(&["profile"], args, ctx.file)?;
    let dir = require(cfg.dumps.as_ref(), "<DUMPS>", "for profile")?;
    if cfg.checkpoint_every == 0 {
        return Err(usage("--checkpoint-every must be >= 1"));
    }
    let paths = list_dumps(dir)?;
    let (mode, rows, layer, tol) = (cfg.aggregation, cfg.rows, cfg.layer, cfg.tolerance);
    // per-file work in parallel, accumulation in file-name order
    let samples = par_map(ctx.jobs, &paths, |p| {
        let dump = crate::fsio::read_dump_file(p)?;
        let report = validate_dump(&dump, tol);
        if !report.pass {
            return Err(anyhow!("{}: dump fails validation", p.display()));
        }
        let ba =
            block_attention_with(&dump, mode, rows).with_context(|| format!("{}", p.display()))?;
        let scores = layer
            .slot_scores(&ba)
            .with_context(|| format!("{}", p.display()))?;
        Ok((dump.header.model_id, scores))
    })?;

    let k = samples[0].1.len();
    let mut acc = ProfileAccumulator::new(k, layer, mode, cfg.checkpoint_every);
    for ((_, scores), path) in samples.iter().zip(&paths) {
        acc.accumulate(scores)
            .with_context(|| format!("{}", path.display()))?;
    }
    let model_id = cfg.model_id.clone().unwrap_or_else(|| samples[0].0.clone());
    let profile = acc.finalize(model_id)?;
    let conv = check_convergence(&acc, cfg.tau, cfg.patience);
    match conv.n_star {
        Some(n) => eprintln!("{} samples, converged at n={n}", acc.n()),
        None => eprintln!("{} samples, not converged (tau {})", acc.n(), cfg.tau),
    }
    let file = profile.to_file(None);
    emit(cfg.out.as_deref(), &pretty(&with_config(&file, &cfg)?))?;
    Ok(ExitCode::SUCCESS)
}

/// Detect the basin shape of a saved profile
#[derive(Args, Debug, Serialize)]
pub struct BasinArgs {
    /// A .profile.json file
    pub profile: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BasinConfig {
    pub profile: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn load_profile(path: &std::path::Path) -> CliResult<attnbasin::AttentionProfile> {
    let file: ProfileFile =
        serde_json::from_value(read_json(path)?).with_context(|| format!("{}", path.display()))?;
    Ok(file
        .into_profile()
        .with_context(|| format!("{}", path.display()))?)
}

pub fn run_basin(args: &BasinArgs, ctx: &Ctx) -> CliResult<ExitCode> {
    let cfg: BasinConfig = resolve(&["basin"], args, ctx.file)?;
    let path = require(cfg.profile.as_ref(), "<PROFILE>", "for basin")?;
    let profile = load_profile(path)?;
    let report = detect_basin(&profile).with_context(|| format!("{}", path.display()))?;
    emit(cfg.out.as_deref(), &pretty(&with_config(&report, &cfg)?))?;
    Ok(ExitCode::SUCCESS)
}
