// SPDX-License-Identifier: MIT OR Apache-2.0

//! Filesystem helpers: dump discovery, parallel loading, atomic writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use attnbasin::dump::FILE_EXTENSION;
use attnbasin::AttentionDump;
use rayon::prelude::*;
use serde_json::Value;

use crate::config::CliResult;

/// `.atnb` files under `path` (or `path` itself), sorted by file name.
pub fn list_dumps(path: &Path) -> CliResult<Vec<PathBuf>> {
    let meta = std::fs::metadata(path).with_context(|| format!("{}", path.display()))?;
    if meta.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(path).with_context(|| format!("{}", path.display()))? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == FILE_EXTENSION) && p.is_file() {
            files.push(p);
        }
    }
    if files.is_empty() {
        return Err(anyhow!("{}: no .{FILE_EXTENSION} files", path.display()).into());
    }
    files.sort();
    Ok(files)
}

/// Runs `f` over `items` on a pool of `jobs` workers (0 = all cores) and
/// returns results in input order.
pub fn par_map<T: Sync, U: Send>(
    jobs: usize,
    items: &[T],
    f: impl Fn(&T) -> anyhow::Result<U> + Sync + Send,
) -> CliResult<Vec<U>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(anyhow::Error::from)?;
    Ok(pool.install(|| items.par_iter().map(&f).collect::<anyhow::Result<Vec<U>>>())?)
}

pub fn read_dump_file(path: &Path) -> anyhow::Result<AttentionDump> {
    AttentionDump::read_file(path).with_context(|| format!("{}", path.display()))
}

/// Writes via a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp =
        tempfile::NamedTempFile::new_in(dir).with_context(|| format!("{}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| anyhow!("{}: {}", path.display(), e.error))?;
    Ok(())
}

pub fn pretty(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON values serialize");
    s.push('\n');
    s
}

/// Writes `text` to `out` atomically, or to stdout when `out` is `None`.
pub fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

pub fn read_json(path: &Path) -> anyhow::Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{}", path.display()))
}
