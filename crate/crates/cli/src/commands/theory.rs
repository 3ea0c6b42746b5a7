// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use attnbasin::harness::curve_csv;
use attnbasin::theory::{gradient_check, placement_sweep, verify_monotonicity, MonotonicityFamily};
use attnbasin::TheoryModel;
use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};

use super::generator::{GeneratorArgs, GeneratorConfig};
use super::{require, success, Ctx};
use crate::config::{resolve, usage, with_config, CliResult};
use crate::fsio::{emit, pretty};

#[derive(Subcommand, Debug)]
pub enum TheoryCommand {
    /// Check the attention/probability monotonicity inequalities and the gradient
    Verify(VerifyArgs),
    /// Expected answer probability of one document at every placement
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct VerifyArgs {
    /// Randomized monotonicity configurations
    #[arg(long)]
    pub trials: Option<usize>,
    /// Randomized finite-difference gradient checks
    #[arg(long)]
    pub gradient_trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Central-difference step
    #[arg(long)]
    pub step: Option<f64>,
    /// Allowed relative gradient error
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Use equal value gains in every trial
    #[arg(long, default_missing_value = "true", num_args = 0..=1)]
    pub equal_kappa: Option<bool>,
    /// Fraction of trials built with a non-maximal target gain
    #[arg(long)]
    pub out_of_hypothesis_rate: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub trials: usize,
    pub gradient_trials: usize,
    pub seed: Option<u64>,
    pub step: f64,
    pub tolerance: f64,
    pub equal_kappa: bool,
    pub out_of_hypothesis_rate: f64,
    pub out: Option<PathBuf>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            gradient_trials: 100,
            seed: None,
            step: 1e-5,
            tolerance: 1e-5,
            equal_kappa: false,
            out_of_hypothesis_rate: 0.0,
            out: None,
        }
    }
}

#[derive(Serialize)]
struct VerifyReport {
    monotonicity: attnbasin::theory::MonotonicityReport,
    gradient: attnbasin::theory::GradientCheckReport,
    violations: usize,
    pass: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub generator: GeneratorArgs,
    /// Document placed at each slot in turn
    #[arg(long)]
    pub target: Option<usize>,
    /// Generator draws averaged per slot
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print slot,value CSV instead of JSON
    #[arg(long, default_missing_value = "true", num_args = 0..=1)]
    pub csv: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    #[serde(flatten)]
    pub generator: GeneratorConfig,
    pub target: usize,
    pub trials: usize,
    pub seed: Option<u64>,
    pub csv: bool,
    pub out: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            target: 0,
            trials: 200,
            seed: None,
            csv: false,
            out: None,
        }
    }
}

#[derive(Serialize)]
struct SweepReport {
    curve: Vec<f64>,
    best_slot: usize,
}

pub fn run(cmd: &TheoryCommand, ctx: &Ctx) -> CliResult<ExitCode> {
    match cmd {
        TheoryCommand::Verify(args) => verify(args, ctx),
        TheoryCommand::Sweep(args) => sweep(args, ctx),
    }
}

fn verify(args: &VerifyArgs, ctx: &Ctx) -> CliResult<ExitCode> {
    let cfg: VerifyConfig = resolve(&["theory", "verify"], args, ctx.file)?;
    let seed = require(cfg.seed, "--seed", "for theory verify")?;
    if cfg.trials == 0 {
        return Err(usage("--trials must be >= 1"));
    }
    if !(0.0..=1.0).contains(&cfg.out_of_hypothesis_rate) {
        return Err(usage("--out-of-hypothesis-rate must be in [0, 1]"));
    }
    let family = MonotonicityFamily {
        equal_kappa: cfg.equal_kappa,
        out_of_hypothesis_rate: cfg.out_of_hypothesis_rate,
        ..Default::default()
    };
    let monotonicity = verify_monotonicity(&family, cfg.trials, seed);
    let gradient = gradient_check(cfg.gradient_trials, seed, cfg.step, cfg.tolerance);
    let violations = monotonicity.violations() + gradient.failures;
    let report = VerifyReport {
        monotonicity,
        gradient,
        violations,
        pass: violations == 0,
    };
    eprintln!("{violations} violation(s)");
    emit(cfg.out.as_deref(), &pretty(&with_config(&report, &cfg)?))?;
    Ok(success(violations == 0))
}

fn sweep(args: &SweepArgs, ctx: &Ctx) -> CliResult<ExitCode> {
    let cfg: SweepConfig = resolve(&["theory", "sweep"], args, ctx.file)?;
    let seed = require(cfg.seed, "--seed", "for theory sweep")?;
    let params = cfg
        .generator
        .params(seed)
        .map_err(|e| usage(e.to_string()))?;
    let model = TheoryModel::new(params.k, params.layers);
    let curve = placement_sweep(&model, &params, cfg.target, cfg.trials)
        .map_err(|e| usage(e.to_string()))?;
    let text = if cfg.csv {
        curve_csv(&curve)
    } else {
        let best_slot = (0..curve.len())
            .max_by(|&a, &b| curve[a].total_cmp(&curve[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        pretty(&with_config(&SweepReport { curve, best_slot }, &cfg)?)
    };
    emit(cfg.out.as_deref(), &text)?;
    Ok(ExitCode::SUCCESS)
}
