// SPDX-License-Identifier: MIT OR Apache-2.0

//! The `.atnb` attention-dump interchange format.
//!
//! A dump holds the attention rows of the query tokens (towards every key)
//! for each layer of one probe sample, plus the token spans of the structural
//! blocks the prompt was built from. Layout on disk:
//!
//! ```text
//! "ATNB" | version: u32 LE | header_len: u64 LE | header (canonical JSON) | tensor (f32 LE)
//! ```
//!
//! The tensor is row-major with the layer axis slowest: `[L, R, T]` in mean
//! mode, `[L, H, R, T]` in per-head mode, where `R` is the number of stored
//! query rows. Keys after a row's own position are stored as literal zeros.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"ATNB";
pub const FORMAT_VERSION: u32 = 1;
pub const FILE_EXTENSION: &str = "atnb";

/// Row-normalization tolerance enforced by [`write_dump`].
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

/// A contiguous half-open token range `[start, end)` covered by one block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpan {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

impl BlockSpan {
    pub fn new(label: impl Into<String>, start: usize, end: usize) -> Self {
        Self {
            label: label.into(),
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, token: usize) -> bool {
        (self.start..self.end).contains(&token)
    }

    fn overlaps(&self, other: &BlockSpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    Mean,
    PerHead,
}

impl std::str::FromStr for HeadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(HeadMode::Mean),
            "per_head" | "per-head" => Ok(HeadMode::PerHead),
            other => Err(Error::invalid("head mode", other.to_string())),
        }
    }
}

/// The structural blocks of one prompt: template pieces, documents in
/// presentation order, and the query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Spans {
    #[serde(default)]
    pub template: Vec<BlockSpan>,
    pub docs: Vec<BlockSpan>,
    pub query: BlockSpan,
}

impl Spans {
    fn all(&self) -> impl Iterator<Item = &BlockSpan> {
        self.template
            .iter()
            .chain(self.docs.iter())
            .chain(std::iter::once(&self.query))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub format_version: u32,
    pub model_id: String,
    pub num_layers: usize,
    pub num_heads: usize,
    pub num_tokens: usize,
    pub head_mode: HeadMode,
    /// Absolute token indices of the stored query rows.
    pub stored_rows: Vec<usize>,
    pub spans: Spans,
    pub sample_id: String,
    /// `permutation[slot]` is the original index of the document presented at `slot`.
    pub permutation: Vec<usize>,
    /// Set by producers that merged all documents into one unstructured block.
    #[serde(default, skip_serializing_if = "is_false")]
    pub disrupted: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl DumpHeader {
    /// Number of document blocks.
    pub fn k(&self) -> usize {
        self.spans.docs.len()
    }

    pub fn num_rows(&self) -> usize {
        self.stored_rows.len()
    }

    /// Heads actually present in the tensor (1 in mean mode).
    pub fn stored_heads(&self) -> usize {
        match self.head_mode {
            HeadMode::Mean => 1,
            HeadMode::PerHead => self.num_heads,
        }
    }

    pub fn tensor_len(&self) -> usize {
        self.num_layers * self.stored_heads() * self.num_rows() * self.num_tokens
    }

    fn to_canonical_json(&self) -> Result<Vec<u8>> {
        // `serde_json::Value` keeps object keys in a BTreeMap, so going through
        // it sorts keys at every nesting level.
        let value = serde_json::to_value(self)?;
        Ok(serde_json::to_vec(&value)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionDump {
    pub header: DumpHeader,
    pub tensor: Vec<f32>,
}

impl AttentionDump {
    /// Pairs a header with its tensor, checking only that the element count
    /// matches. Content invariants are checked by [`validate_dump`].
    pub fn new(header: DumpHeader, tensor: Vec<f32>) -> Result<Self> {
        let expected = header.tensor_len();
        if tensor.len() != expected {
            return Err(Error::Shape(format!(
                "tensor has {} elements, header implies {}",
                tensor.len(),
                expected
            )));
        }
        Ok(Self { header, tensor })
    }

    /// One stored row over all keys. `head` is ignored in mean mode.
    pub fn row(&self, layer: usize, head: usize, row: usize) -> &[f32] {
        let h = &self.header;
        let t = h.num_tokens;
        let head = if h.head_mode == HeadMode::Mean {
            0
        } else {
            head
        };
        let offset = ((layer * h.stored_heads() + head) * h.num_rows() + row) * t;
        &self.tensor[offset..offset + t]
    }

    /// A stored row averaged over the stored heads, in f64.
    pub fn head_mean_row(&self, layer: usize, row: usize) -> Vec<f64> {
        let heads = self.header.stored_heads();
        let mut out = vec![0.0f64; self.header.num_tokens];
        for head in 0..heads {
            for (acc, &v) in out.iter_mut().zip(self.row(layer, head, row)) {
                *acc += f64::from(v);
            }
        }
        if heads > 1 {
            let inv = heads as f64;
            out.iter_mut().for_each(|v| *v /= inv);
        }
        out
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        read_dump(BufReader::new(file))
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<u64> {
        let mut writer = BufWriter::new(File::create(path)?);
        let n = write_dump(self, &mut writer)?;
        writer.flush()?;
        Ok(n)
    }
}

/// Outcome of [`validate_dump`]. Never an error: every problem is reported.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub pass: bool,
    pub tolerance: f64,
    /// `|row_sum - 1|` for every stored row, in tensor order.
    pub row_residuals: Vec<f64>,
    pub max_residual: f64,
    pub out_of_range_values: usize,
    pub non_finite_values: usize,
    /// Non-zero entries at keys after the row's own position.
    pub causal_violations: usize,
    pub span_violations: Vec<String>,
    pub shape_violations: Vec<String>,
}

pub fn validate_dump(dump: &AttentionDump, tolerance: f64) -> ValidationReport {
    let h = &dump.header;
    let mut report = ValidationReport {
        tolerance,
        ..Default::default()
    };

    if h.format_version != FORMAT_VERSION {
        report.shape_violations.push(format!(
            "format_version {} != {}",
            h.format_version, FORMAT_VERSION
        ));
    }
    if h.num_layers == 0 || h.num_heads == 0 || h.num_tokens == 0 {
        report
            .shape_violations
            .push("num_layers, num_heads and num_tokens must be positive".into());
    }
    if dump.tensor.len() != h.tensor_len() {
        report.shape_violations.push(format!(
            "tensor has {} elements, header implies {}",
            dump.tensor.len(),
            h.tensor_len()
        ));
    }
    check_spans(h, &mut report.span_violations);

    if report.shape_violations.is_empty() && h.num_tokens > 0 {
        let heads = h.stored_heads();
        for layer in 0..h.num_layers {
            for head in 0..heads {
                for (r, &pos) in h.stored_rows.iter().enumerate() {
                    let row = dump.row(layer, head, r);
                    let mut sum = 0.0f64;
                    for (key, &v) in row.iter().enumerate() {
                        if !v.is_finite() {
                            report.non_finite_values += 1;
                            continue;
                        }
                        if !(0.0..=1.0).contains(&v) {
                            report.out_of_range_values += 1;
                        }
                        if key > pos && v != 0.0 {
                            report.causal_violations += 1;
                        }
                        sum += f64::from(v);
                    }
                    let residual = (sum - 1.0).abs();
                    report.max_residual = report.max_residual.max(residual);
                    report.row_residuals.push(residual);
                }
            }
        }
    }

    report.pass = report.shape_violations.is_empty()
        && report.span_violations.is_empty()
        && report.out_of_range_values == 0
        && report.non_finite_values == 0
        && report.causal_violations == 0
        && report.max_residual <= tolerance;
    report
}

fn check_spans(h: &DumpHeader, out: &mut Vec<String>) {
    let t = h.num_tokens;
    for span in h.spans.all() {
        if span.start >= span.end || span.end > t {
            out.push(format!(
                "span {} [{}, {}) is empty or outside [0, {t})",
                span.label, span.start, span.end
            ));
        }
    }
    if h.spans.docs.is_empty() {
        out.push("no document spans".into());
    }
    for pair in h.spans.docs.windows(2) {
        if pair[1].start < pair[0].start {
            out.push(format!(
                "doc spans out of order: {} starts before {}",
                pair[1].label, pair[0].label
            ));
        }
    }
    let all: Vec<&BlockSpan> = h.spans.all().collect();
    for (i, a) in all.iter().enumerate() {
        for b in &all[i + 1..] {
            if a.overlaps(b) {
                out.push(format!(
                    "spans overlap: {} [{}, {}) and {} [{}, {})",
                    a.label, a.start, a.end, b.label, b.start, b.end
                ));
            }
        }
    }
    for &row in &h.stored_rows {
        if row >= t || !h.spans.query.contains(row) {
            out.push(format!("stored row {row} lies outside the query span"));
        }
    }
    let k = h.k();
    let mut seen = vec![false; k];
    let valid_perm = h.permutation.len() == k
        && h.permutation
            .iter()
            .all(|&p| p < k && !std::mem::replace(&mut seen[p], true));
    if !valid_perm {
        out.push(format!(
            "permutation {:?} is not a permutation of 0..{k}",
            h.permutation
        ));
    }
}

/// Serializes `dump` to `sink`, returning the number of bytes written.
///
/// The dump is validated at [`DEFAULT_TOLERANCE`] first; nothing is written
/// if it fails.
pub fn write_dump<W: Write>(dump: &AttentionDump, mut sink: W) -> Result<u64> {
    let report = validate_dump(dump, DEFAULT_TOLERANCE);
    if !report.pass {
        return Err(Error::invalid("dump", summarize(&report)));
    }
    let header = dump.header.to_canonical_json()?;
    let mut tensor = Vec::with_capacity(dump.tensor.len() * 4);
    for v in &dump.tensor {
        tensor.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(&MAGIC)?;
    sink.write_all(&FORMAT_VERSION.to_le_bytes())?;
    sink.write_all(&(header.len() as u64).to_le_bytes())?;
    sink.write_all(&header)?;
    sink.write_all(&tensor)?;
    Ok((4 + 4 + 8 + header.len() + tensor.len()) as u64)
}

fn summarize(report: &ValidationReport) -> String {
    let mut parts = Vec::new();
    parts.extend(report.shape_violations.iter().cloned());
    parts.extend(report.span_violations.iter().cloned());
    if report.non_finite_values > 0 {
        parts.push(format!("{} non-finite values", report.non_finite_values));
    }
    if report.out_of_range_values > 0 {
        parts.push(format!(
            "{} values outside [0, 1]",
            report.out_of_range_values
        ));
    }
    if report.causal_violations > 0 {
        parts.push(format!(
            "{} non-zero entries after the row position",
            report.causal_violations
        ));
    }
    if report.max_residual > report.tolerance {
        parts.push(format!(
            "row sum residual {:.3e} exceeds {:.1e}",
            report.max_residual, report.tolerance
        ));
    }
    parts.join("; ")
}

fn read_exact_or_truncated<R: Read>(
    source: &mut R,
    buf: &mut [u8],
    what: &'static str,
) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::Truncated {
                    what,
                    expected: buf.len() as u64,
                    found: filled as u64,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

pub fn read_dump<R: Read>(mut source: R) -> Result<AttentionDump> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut source, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            "ATNB"
        )));
    }
    let mut word = [0u8; 4];
    read_exact_or_truncated(&mut source, &mut word, "version")?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mut len_bytes = [0u8; 8];
    read_exact_or_truncated(&mut source, &mut len_bytes, "header length")?;
    let header_len = u64::from_le_bytes(len_bytes);

    let mut header_bytes = Vec::new();
    let got = source
        .by_ref()
        .take(header_len)
        .read_to_end(&mut header_bytes)?;
    if (got as u64) < header_len {
        return Err(Error::Truncated {
            what: "header",
            expected: header_len,
            found: got as u64,
        });
    }
    let header: DumpHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| Error::Format(format!("header: {e}")))?;
    if header.format_version != version {
        return Err(Error::Version {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }

    let expected = header.tensor_len() as u64 * 4;
    let mut raw = Vec::with_capacity(expected as usize);
    let got = source.by_ref().take(expected).read_to_end(&mut raw)? as u64;
    if got < expected {
        return Err(Error::Truncated {
            what: "tensor",
            expected,
            found: got,
        });
    }
    let mut probe = [0u8; 1];
    if source.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing bytes after tensor".into()));
    }
    let tensor = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    AttentionDump::new(header, tensor)
}
