// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use attnbasin::dump::DEFAULT_TOLERANCE;
use attnbasin::{validate_dump, ValidationReport};
use clap::Args;
use serde::{Deserialize, Serialize};

use super::{success, Ctx};
use crate::config::{resolve, usage, with_config, CliResult};
use crate::fsio::{emit, list_dumps, par_map, pretty, read_dump_file};

/// Check dumps for format, span and normalization problems
#[derive(Args, Debug, Serialize)]
pub struct ValidateArgs {
    /// Dump files or directories of .atnb files
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<PathBuf>,
    /// Allowed |row sum - 1|
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Write the report here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidateConfig {
    pub inputs: Vec<PathBuf>,
    pub tolerance: f64,
    pub out: Option<PathBuf>,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            tolerance: DEFAULT_TOLERANCE,
            out: None,
        }
    }
}

#[derive(Serialize)]
struct FileReport {
    path: PathBuf,
    /// Set when the file could not be decoded at all.
    #[serde(skip_serializing_if = "Option::is_none")]
    read_error: Option<String>,
    #[serde(flatten)]
    report: ValidationReport,
}

#[derive(Serialize)]
struct Summary {
    passed: usize,
    failed: usize,
    files: Vec<FileReport>,
}

pub fn run(args: &ValidateArgs, ctx: &Ctx) -> CliResult<ExitCode> {
    let cfg: ValidateConfig = resolve(&["validate"], args, ctx.file)?;
    if cfg.inputs.is_empty() {
        return Err(usage("validate needs at least one input"));
    }
    let mut paths = Vec::new();
    for input in &cfg.inputs {
        paths.extend(list_dumps(input)?);
    }
    let tol = cfg.tolerance;
    let files = par_map(ctx.jobs, &paths, |p| {
        Ok(match read_dump_file(p) {
            Ok(dump) => FileReport {
                path: p.clone(),
                read_error: None,
                report: validate_dump(&dump, tol),
            },
            Err(e) => FileReport {
                path: p.clone(),
                read_error: Some(format!("{e:#}")),
                report: ValidationReport {
                    tolerance: tol,
                    ..Default::default()
                },
            },
        })
    })?;
    let failed = files.iter().filter(|f| !f.report.pass).count();
    for f in files.iter().filter(|f| !f.report.pass) {
        eprintln!("invalid: {}", f.path.display());
    }
    let summary = Summary {
        passed: files.len() - failed,
        failed,
        files,
    };
    emit(cfg.out.as_deref(), &pretty(&with_config(&summary, &cfg)?))?;
    Ok(success(failed == 0))
}
