// SPDX-License-Identifier: MIT OR Apache-2.0

//! Flag/config-file merging. Every subcommand has a clap struct whose fields
//! are all optional and a resolved struct with defaults materialized; values
//! are layered defaults < config file < flags and the resolved struct is
//! echoed into the output under `"config"`.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

/// Failure classes, mapped to exit codes by `main`.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: exit 2 with usage on stderr.
    Usage(String),
    /// Missing input, invalid data, failed run: exit 1.
    Failed(anyhow::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => f.write_str(msg),
            CliError::Failed(e) => write!(f, "{e:#}"),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Failed(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Reads a JSON config file; must hold an object.
pub fn load(path: &Path) -> CliResult<Value> {
    let text =
        std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    if !value.is_object() {
        return Err(usage(format!(
            "{}: config must be a JSON object",
            path.display()
        )));
    }
    Ok(value)
}

/// Top-level keys of the config file that name a section rather than a value.
const SECTIONS: [&str; 8] = [
    "validate", "profile", "basin", "rerank", "layers", "theory", "simulate", "permute",
];

/// Layers `file` (top-level scalars, then the nested `section` objects) under
/// the non-null fields of `flags` and deserializes the result.
pub fn resolve<A: Serialize, R: Serialize + DeserializeOwned>(
    section: &[&str],
    flags: &A,
    file: Option<&Value>,
) -> CliResult<R> {
    let mut merged = Map::new();
    if let Some(Value::Object(top)) = file {
        for (k, v) in top {
            if !SECTIONS.contains(&k.as_str()) {
                merged.insert(k.clone(), v.clone());
            }
        }
        let mut node = file;
        for name in section {
            node = node.and_then(|n| n.get(*name));
            if let Some(Value::Object(obj)) = node {
                for (k, v) in obj {
                    if !v.is_object() {
                        merged.insert(k.clone(), v.clone());
                    }
                }
            }
        }
    }
    let Value::Object(given) = serde_json::to_value(flags).map_err(anyhow::Error::from)? else {
        unreachable!("argument structs serialize to objects");
    };
    for (k, v) in given {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    let keys: Vec<String> = merged.keys().cloned().collect();
    let resolved: R = serde_json::from_value(Value::Object(merged))
        .map_err(|e| usage(format!("invalid configuration: {e}")))?;
    if let Ok(Value::Object(known)) = serde_json::to_value(&resolved) {
        for k in keys.iter().filter(|k| !known.contains_key(*k)) {
            if !SKIPPED.contains(&k.as_str()) {
                eprintln!("warning: ignoring unknown config key {k:?}");
            }
        }
    }
    Ok(resolved)
}

/// Accepted but not echoed (they do not affect results).
const SKIPPED: [&str; 1] = ["jobs"];

/// `value` with the resolved config added under `"config"`.
pub fn with_config<T: Serialize, C: Serialize>(value: &T, config: &C) -> CliResult<Value> {
    let mut v = serde_json::to_value(value).map_err(anyhow::Error::from)?;
    let cfg = serde_json::to_value(config).map_err(anyhow::Error::from)?;
    match &mut v {
        Value::Object(map) => {
            map.insert("config".into(), cfg);
        }
        other => {
            let inner = std::mem::take(other);
            *other = serde_json::json!({ "result": inner, "config": cfg });
        }
    }
    Ok(v)
}
