// SPDX-License-Identifier: MIT OR Apache-2.0

use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use attnbasin::rerank::{read_docs_jsonl, rerank_with, RerankOptions};
use attnbasin::Strategy;
use clap::Args;
use serde::{Deserialize, Serialize};

use super::profile::load_profile;
use super::{require, Ctx};
use crate::config::{resolve, with_config, CliResult};
use crate::fsio::{emit, pretty};

/// Order retrieved documents for presentation
#[derive(Args, Debug, Serialize)]
pub struct RerankArgs {
    /// JSON-lines file of {id, score, text?} in retriever order
    #[arg(long)]
    pub docs: Option<PathBuf>,
    /// attnrank, random, descending, ascending or lim
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// Profile for attnrank
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Seed for the random strategy
    #[arg(long)]
    pub seed: Option<u64>,
    /// Resample a profile measured at a different document count
    #[arg(long, default_missing_value = "true", num_args = 0..=1)]
    pub resample_profile: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankConfig {
    pub docs: Option<PathBuf>,
    pub strategy: Strategy,
    pub profile: Option<PathBuf>,
    pub seed: Option<u64>,
    pub resample_profile: bool,
    pub out: Option<PathBuf>,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            docs: None,
            strategy: Strategy::Attnrank,
            profile: None,
            seed: None,
            resample_profile: false,
            out: None,
        }
    }
}

pub fn run(args: &RerankArgs, ctx: &Ctx) -> CliResult<ExitCode> {
    let cfg: RerankConfig = resolve(&["rerank"], args, ctx.file)?;
    let profile_path = match cfg.strategy {
        Strategy::Attnrank => Some(require(
            cfg.profile.as_ref(),
            "--profile",
            "for --strategy attnrank",
        )?),
        _ => None,
    };
    if cfg.strategy == Strategy::Random {
        require(cfg.seed, "--seed", "for --strategy random")?;
    }
    let docs_path = require(cfg.docs.as_ref(), "--docs", "for rerank")?;
    let file =
        std::fs::File::open(docs_path).with_context(|| format!("{}", docs_path.display()))?;
    let docs = read_docs_jsonl(BufReader::new(file))
        .with_context(|| format!("{}", docs_path.display()))?;
    let profile = profile_path.map(|p| load_profile(p)).transpose()?;
    let options = RerankOptions {
        resample_profile: cfg.resample_profile,
    };
    let ordering = rerank_with(&docs, cfg.strategy, profile.as_ref(), cfg.seed, options)?;
    let output = ordering.to_output(None);
    emit(cfg.out.as_deref(), &pretty(&with_config(&output, &cfg)?))?;
    Ok(ExitCode::SUCCESS)
}
