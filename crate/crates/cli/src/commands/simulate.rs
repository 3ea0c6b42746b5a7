// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use attnbasin::dump::FILE_EXTENSION;
use attnbasin::synth::random_permutations;
use attnbasin::write_dump;
use clap::Args;
use serde::{Deserialize, Serialize};

use super::generator::{GeneratorArgs, GeneratorConfig};
use super::{require, Ctx};
use crate::config::{resolve, usage, with_config, CliResult};
use crate::fsio::{par_map, pretty, write_atomic};

/// Write synthetic dumps with a controllable basin
#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub generator: GeneratorArgs,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shuffle document order per sample
    #[arg(long, default_missing_value = "true", num_args = 0..=1)]
    pub permute: Option<bool>,
    /// Output directory (created if missing)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    #[serde(flatten)]
    pub generator: GeneratorConfig,
    pub samples: usize,
    pub seed: Option<u64>,
    pub permute: bool,
    pub out: Option<PathBuf>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            samples: 400,
            seed: None,
            permute: false,
            out: None,
        }
    }
}

#[derive(Serialize)]
struct SimulateReport {
    out: PathBuf,
    files: usize,
    expected_profile: Vec<f64>,
    analytic_rho: Vec<f64>,
}

pub fn run(args: &SimulateArgs, ctx: &Ctx) -> CliResult<ExitCode> {
    let cfg: SimulateConfig = resolve(&["simulate"], args, ctx.file)?;
    let seed = require(cfg.seed, "--seed", "for simulate")?;
    let out = require(cfg.out.as_ref(), "--out", "for simulate")?;
    if cfg.samples == 0 {
        return Err(usage("--samples must be >= 1"));
    }
    let params = cfg
        .generator
        .params(seed)
        .map_err(|e| usage(e.to_string()))?;
    std::fs::create_dir_all(out).map_err(|e| anyhow::anyhow!("{}: {e}", out.display()))?;
    let perms = cfg
        .permute
        .then(|| random_permutations(params.k, cfg.samples, seed));
    let identity: Vec<usize> = (0..params.k).collect();
    let indices: Vec<usize> = (0..cfg.samples).collect();
    par_map(ctx.jobs, &indices, |&i| {
        let perm = perms
            .as_ref()
            .map_or(identity.as_slice(), |p| p[i].as_slice());
        let dump = params.generate_one(i, perm)?;
        let mut bytes = Vec::new();
        write_dump(&dump, &mut bytes)?;
        let path = out.join(format!("{}.{FILE_EXTENSION}", dump.header.sample_id));
        write_atomic(&path, &bytes).map_err(|e| anyhow::anyhow!("{e}"))
    })?;
    let report = SimulateReport {
        out: out.clone(),
        files: cfg.samples,
        expected_profile: params.expected_profile(),
        analytic_rho: params.analytic_rho(),
    };
    print!("{}", pretty(&with_config(&report, &cfg)?));
    Ok(ExitCode::SUCCESS)
}
