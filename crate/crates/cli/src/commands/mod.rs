// SPDX-License-Identifier: MIT OR Apache-2.0

pub mod generator;
pub mod layers;
pub mod permute;
pub mod profile;
pub mod rerank;
pub mod simulate;
pub mod theory;
pub mod validate;

use std::process::ExitCode;

use serde_json::Value;

use crate::config::{usage, CliResult};

/// Context every subcommand receives.
pub struct Ctx<'a> {
    pub file: Option<&'a Value>,
    pub jobs: usize,
}

pub fn require<T>(value: Option<T>, flag: &str, why: &str) -> CliResult<T> {
    value.ok_or_else(|| usage(format!("{flag} is required {why}")))
}

pub fn success(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
