//! On-disk formats and the run manifest.
//!
//! Every artifact lands atomically (temp file, then rename) so a crashed run
//! never leaves a half-written file under its final name. Numeric cells use
//! the shortest decimal that parses back to the same f64, so a save/load
//! round trip is value-identical, not merely close. Each format carries a
//! version tag; a newer tag than this build understands is a hard error, and
//! damaged or shortened files are refused without returning partial data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::stream::TimeTag;
use crate::sweep::{PleTrace, SweepDirection};

pub const TAG_STREAM_VERSION: u32 = 1;
pub const PLE_TRACE_VERSION: u32 = 1;
pub const RECORD_VERSION: u32 = 1;
pub const TABLE_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;

/// File name of the run manifest inside an output directory.
pub const MANIFEST_NAME: &str = "manifest.json";

/// Write `bytes` to `path` through a temporary sibling and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid("path", "has no file name"))?;
    let tmp = path.with_file_name(format!("{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        write!(out, "{b:02x}").unwrap();
    }
    out
}

fn file_sha256(path: &Path) -> Result<(u64, String)> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    let mut len = 0u64;
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        len += n as u64;
        h.update(&buf[..n]);
    }
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        write!(out, "{b:02x}").unwrap();
    }
    Ok((len, out))
}

fn parse_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn corrupt(path: &Path, expected: impl Into<String>, found: impl Into<String>) -> Error {
    Error::Corrupt {
        path: path.to_path_buf(),
        expected: expected.into(),
        found: found.into(),
    }
}

/// Checks the `format`/`format_version` pair carried at the head of a file.
fn check_format(path: &Path, head: &serde_json::Value, kind: &str, supported: u32) -> Result<u32> {
    let format = head
        .get("format")
        .and_then(|v| v.as_str())
        .ok_or_else(|| parse_err(path, "missing `format` field"))?;
    if format != kind {
        return Err(parse_err(
            path,
            format!("holds a `{format}` record, expected `{kind}`"),
        ));
    }
    let version = head
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| parse_err(path, "missing `format_version` field"))?;
    let version = u32::try_from(version).unwrap_or(u32::MAX);
    if version > supported {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            supported,
        });
    }
    Ok(version)
}

// ---------------------------------------------------------------------------
// Time-tag streams

/// Header block at the top of a time-tag file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagStreamHeader {
    pub format: String,
    pub format_version: u32,
    /// Total acquisition length the tags were drawn from.
    pub duration_s: f64,
    pub n_channel_1: u64,
    pub n_channel_2: u64,
    pub rate_channel_1_cps: f64,
    pub rate_channel_2_cps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

/// Writes tags as a two-column table under a one-line JSON header.
///
/// The header records per-channel counts; the loader uses them to detect a
/// shortened file.
pub fn save_time_tags(
    path: &Path,
    tags: &[TimeTag],
    duration_s: f64,
    master_seed: Option<u64>,
    config_hash: Option<String>,
) -> Result<TagStreamHeader> {
    if !(duration_s > 0.0) {
        return Err(Error::invalid("duration_s", "must be positive"));
    }
    let n1 = tags.iter().filter(|t| t.channel == 1).count() as u64;
    let n2 = tags.len() as u64 - n1;
    let header = TagStreamHeader {
        format: "time-tags".into(),
        format_version: TAG_STREAM_VERSION,
        duration_s,
        n_channel_1: n1,
        n_channel_2: n2,
        rate_channel_1_cps: n1 as f64 / duration_s,
        rate_channel_2_cps: n2 as f64 / duration_s,
        master_seed,
        config_hash,
    };
    let mut text = String::with_capacity(32 * tags.len() + 256);
    text.push_str("# ");
    text.push_str(&serde_json::to_string(&header)?);
    text.push('\n');
    text.push_str("channel,time_s\n");
    for tag in tags {
        writeln!(text, "{},{}", tag.channel, tag.time_s).unwrap();
    }
    atomic_write(path, text.as_bytes())?;
    Ok(header)
}

pub fn load_time_tags(path: &Path) -> Result<(Vec<TimeTag>, TagStreamHeader)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let head_line = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| parse_err(path, "missing `# {..}` header line"))?;
    let head: serde_json::Value = serde_json::from_str(head_line)
        .map_err(|e| parse_err(path, format!("bad header: {e}")))?;
    check_format(path, &head, "time-tags", TAG_STREAM_VERSION)?;
    let header: TagStreamHeader = serde_json::from_value(head)
        .map_err(|e| parse_err(path, format!("bad header: {e}")))?;
    match lines.next() {
        Some("channel,time_s") => {}
        other => {
            return Err(parse_err(
                path,
                format!("expected column line `channel,time_s`, found {other:?}"),
            ))
        }
    }
    let expected = header.n_channel_1 + header.n_channel_2;
    let mut tags = Vec::with_capacity(expected as usize);
    let (mut n1, mut n2) = (0u64, 0u64);
    for line in lines {
        let (ch, t) = line
            .split_once(',')
            .and_then(|(c, t)| Some((c.parse::<u8>().ok()?, t.parse::<f64>().ok()?)))
            .ok_or_else(|| corrupt(path, "a `channel,time_s` row", line.to_string()))?;
        if ch == 1 {
            n1 += 1;
        } else if ch == 2 {
            n2 += 1;
        } else {
            return Err(corrupt(path, "channel 1 or 2", line.to_string()));
        }
        tags.push(TimeTag {
            channel: ch,
            time_s: t,
        });
    }
    if n1 != header.n_channel_1 || n2 != header.n_channel_2 {
        return Err(corrupt(
            path,
            format!("{} + {} rows", header.n_channel_1, header.n_channel_2),
            format!("{n1} + {n2} rows"),
        ));
    }
    Ok((tags, header))
}

// ---------------------------------------------------------------------------
// Scan traces

#[derive(Debug, Serialize, Deserialize)]
struct PleSidecar {
    format: String,
    format_version: u32,
    center_hz: f64,
    detunings_hz: Vec<f64>,
    directions: Vec<SweepDirection>,
    start_times_s: Vec<f64>,
    live_time_s: f64,
    power_nw: f64,
    /// File name (same directory) of the counts matrix.
    matrix: String,
}

/// Writes a trace as `<base>.csv` (counts matrix, one row per pass) plus
/// `<base>.json` (axis and timing sidecar). Returns the two paths.
pub fn save_ple_trace(base: &Path, trace: &PleTrace) -> Result<(PathBuf, PathBuf)> {
    let csv_path = base.with_extension("csv");
    let json_path = base.with_extension("json");
    let matrix_name = csv_path
        .file_name()
        .ok_or_else(|| Error::invalid("base", "has no file name"))?
        .to_string_lossy()
        .into_owned();
    let sidecar = PleSidecar {
        format: "ple-trace".into(),
        format_version: PLE_TRACE_VERSION,
        center_hz: trace.center_hz,
        detunings_hz: trace.detunings_hz.clone(),
        directions: trace.directions.clone(),
        start_times_s: trace.start_times_s.clone(),
        live_time_s: trace.live_time_s,
        power_nw: trace.power_nw,
        matrix: matrix_name,
    };
    let mut text = String::new();
    writeln!(
        text,
        "# {{\"format\":\"ple-trace\",\"format_version\":{},\"rows\":{},\"cols\":{}}}",
        PLE_TRACE_VERSION,
        trace.counts.len(),
        trace.detunings_hz.len()
    )
    .unwrap();
    for row in &trace.counts {
        let mut first = true;
        for v in row {
            if !first {
                text.push(',');
            }
            write!(text, "{v}").unwrap();
            first = false;
        }
        text.push('\n');
    }
    atomic_write(&csv_path, text.as_bytes())?;
    let mut json = serde_json::to_string_pretty(&sidecar)?;
    json.push('\n');
    atomic_write(&json_path, json.as_bytes())?;
    Ok((csv_path, json_path))
}

/// Loads a trace saved by [`save_ple_trace`]. Accepts the base path or either
/// half of the pair.
pub fn load_ple_trace(path: &Path) -> Result<PleTrace> {
    let json_path = path.with_extension("json");
    let text = fs::read_to_string(&json_path)?;
    let head: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| parse_err(&json_path, format!("bad sidecar: {e}")))?;
    check_format(&json_path, &head, "ple-trace", PLE_TRACE_VERSION)?;
    let sidecar: PleSidecar = serde_json::from_value(head)
        .map_err(|e| parse_err(&json_path, format!("bad sidecar: {e}")))?;
    let csv_path = json_path.with_file_name(&sidecar.matrix);

    let matrix_text = fs::read_to_string(&csv_path)?;
    let mut lines = matrix_text.lines();
    let head_line = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| parse_err(&csv_path, "missing `# {..}` header line"))?;
    let head: serde_json::Value = serde_json::from_str(head_line)
        .map_err(|e| parse_err(&csv_path, format!("bad header: {e}")))?;
    check_format(&csv_path, &head, "ple-trace", PLE_TRACE_VERSION)?;
    let rows = head.get("rows").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
    let cols = head.get("cols").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
    if cols != sidecar.detunings_hz.len() || rows != sidecar.directions.len() {
        return Err(corrupt(
            &csv_path,
            format!(
                "{} x {} matrix",
                sidecar.directions.len(),
                sidecar.detunings_hz.len()
            ),
            format!("{rows} x {cols} header"),
        ));
    }
    let mut counts = Vec::with_capacity(rows);
    for line in lines {
        let row = line
            .split(',')
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|_| corrupt(&csv_path, "a numeric row", line.to_string()))?;
        if row.len() != cols {
            return Err(corrupt(
                &csv_path,
                format!("{cols} columns"),
                format!("{} columns", row.len()),
            ));
        }
        counts.push(row);
    }
    if counts.len() != rows {
        return Err(corrupt(
            &csv_path,
            format!("{rows} rows"),
            format!("{} rows", counts.len()),
        ));
    }
    Ok(PleTrace {
        center_hz: sidecar.center_hz,
        detunings_hz: sidecar.detunings_hz,
        counts,
        directions: sidecar.directions,
        start_times_s: sidecar.start_times_s,
        live_time_s: sidecar.live_time_s,
        power_nw: sidecar.power_nw,
    })
}

// ---------------------------------------------------------------------------
// Structured result records

#[derive(Debug, Serialize, Deserialize)]
struct Record<T> {
    format: String,
    format_version: u32,
    payload: T,
}

/// Saves an analysis result as a tagged JSON record.
pub fn save_record<T: Serialize>(path: &Path, kind: &str, payload: &T) -> Result<()> {
    let record = Record {
        format: kind.to_string(),
        format_version: RECORD_VERSION,
        payload,
    };
    let mut json = serde_json::to_string_pretty(&record)?;
    json.push('\n');
    atomic_write(path, json.as_bytes())
}

/// Loads a record saved by [`save_record`], checking its kind tag first.
pub fn load_record<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = fs::read_to_string(path)?;
    let head: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))?;
    check_format(path, &head, kind, RECORD_VERSION)?;
    let payload = head
        .get("payload")
        .cloned()
        .ok_or_else(|| parse_err(path, "missing `payload` field"))?;
    serde_json::from_value(payload).map_err(|e| parse_err(path, format!("bad payload: {e}")))
}

// ---------------------------------------------------------------------------
// Plot-ready tables

/// Writes named numeric columns as CSV under a one-line JSON header carrying
/// free-form metadata and the row count.
pub fn save_table(
    path: &Path,
    meta: &serde_json::Value,
    columns: &[(&str, &[f64])],
) -> Result<()> {
    if columns.is_empty() {
        return Err(Error::invalid("columns", "need at least one column"));
    }
    let rows = columns[0].1.len();
    for (name, col) in columns {
        if col.len() != rows {
            return Err(Error::invalid(
                "columns",
                format!("column `{name}` has {} rows, expected {rows}", col.len()),
            ));
        }
    }
    let head = serde_json::json!({
        "format": "table",
        "format_version": TABLE_VERSION,
        "rows": rows,
        "meta": meta,
    });
    let mut text = String::new();
    writeln!(text, "# {}", serde_json::to_string(&head)?).unwrap();
    let names: Vec<&str> = columns.iter().map(|(n, _)| *n).collect();
    writeln!(text, "{}", names.join(",")).unwrap();
    for i in 0..rows {
        let mut first = true;
        for (_, col) in columns {
            if !first {
                text.push(',');
            }
            write!(text, "{}", col[i]).unwrap();
            first = false;
        }
        text.push('\n');
    }
    atomic_write(path, text.as_bytes())
}

/// Loads a table saved by [`save_table`]: metadata plus named columns.
#[allow(clippy::type_complexity)]
pub fn load_table(path: &Path) -> Result<(serde_json::Value, Vec<(String, Vec<f64>)>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let head_line = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| parse_err(path, "missing `# {..}` header line"))?;
    let head: serde_json::Value = serde_json::from_str(head_line)
        .map_err(|e| parse_err(path, format!("bad header: {e}")))?;
    check_format(path, &head, "table", TABLE_VERSION)?;
    let rows = head.get("rows").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
    let meta = head.get("meta").cloned().unwrap_or(serde_json::Value::Null);
    let names: Vec<String> = lines
        .next()
        .ok_or_else(|| parse_err(path, "missing column line"))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut columns: Vec<(String, Vec<f64>)> = names
        .into_iter()
        .map(|n| (n, Vec::with_capacity(rows)))
        .collect();
    let mut seen = 0usize;
    for line in lines {
        let mut fields = line.split(',');
        for (_, col) in columns.iter_mut() {
            let v = fields
                .next()
                .and_then(|f| f.parse::<f64>().ok())
                .ok_or_else(|| corrupt(path, "a full numeric row", line.to_string()))?;
            col.push(v);
        }
        if fields.next().is_some() {
            return Err(corrupt(
                path,
                format!("{} columns", columns.len()),
                line.to_string(),
            ));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(corrupt(
            path,
            format!("{rows} rows"),
            format!("{seen} rows"),
        ));
    }
    Ok((meta, columns))
}

// ---------------------------------------------------------------------------
// Run manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub bytes: u64,
    pub sha256: String,
    pub format: String,
    pub format_version: u32,
}

/// Index of everything a run wrote: relative path, size, and content hash of
/// each artifact, plus the seed and config hash the run started from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub format_version: u32,
    pub tool: String,
    /// Command line that produced the dataset.
    pub command: String,
    pub master_seed: u64,
    pub config_hash: String,
    /// Keyed by path relative to the manifest's directory; BTreeMap keeps
    /// serialization order stable.
    pub files: BTreeMap<String, FileEntry>,
}

impl DatasetManifest {
    pub fn new(command: impl Into<String>, master_seed: u64, config_hash: impl Into<String>) -> Self {
        DatasetManifest {
            format: "manifest".into(),
            format_version: MANIFEST_VERSION,
            tool: format!("sivsim {}", env!("CARGO_PKG_VERSION")),
            command: command.into(),
            master_seed,
            config_hash: config_hash.into(),
            files: BTreeMap::new(),
        }
    }

    /// Hashes `root/rel` and adds it under `rel`.
    pub fn record(&mut self, root: &Path, rel: &str, format: &str, format_version: u32) -> Result<()> {
        let (bytes, sha256) = file_sha256(&root.join(rel))?;
        self.files.insert(
            rel.to_string(),
            FileEntry {
                bytes,
                sha256,
                format: format.to_string(),
                format_version,
            },
        );
        Ok(())
    }

    pub fn save(&self, root: &Path) -> Result<PathBuf> {
        let path = root.join(MANIFEST_NAME);
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        atomic_write(&path, json.as_bytes())?;
        Ok(path)
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path)?;
        let head: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| parse_err(&path, e.to_string()))?;
        check_format(&path, &head, "manifest", MANIFEST_VERSION)?;
        serde_json::from_value(head).map_err(|e| parse_err(&path, e.to_string()))
    }

    /// Recomputes every listed hash; the first file that is missing or does
    /// not match is reported by name.
    pub fn verify(&self, root: &Path) -> Result<()> {
        for (rel, entry) in &self.files {
            let path = root.join(rel);
            if !path.is_file() {
                return Err(corrupt(&path, entry.sha256.clone(), "missing file"));
            }
            let (bytes, sha256) = file_sha256(&path)?;
            if bytes != entry.bytes || sha256 != entry.sha256 {
                return Err(corrupt(&path, entry.sha256.clone(), sha256));
            }
        }
        Ok(())
    }

    /// Digest over (path, hash) pairs only, so two runs compare by content
    /// regardless of the command string or tool build recorded alongside.
    pub fn content_digest(&self) -> String {
        let mut text = String::new();
        for (rel, entry) in &self.files {
            writeln!(text, "{rel}:{}", entry.sha256).unwrap();
        }
        sha256_hex(text.as_bytes())
    }
}
