//! Run manifests and report documents.
//!
//! Every command emits a single structured JSON report embedding a manifest
//! of its inputs (paths and digests), parameters, seeds, and tool version.
//! Reports are deterministic: identical manifests produce byte-identical
//! documents. Wall-clock timestamps are only embedded when supplied via the
//! `EXPDIAG_TIMESTAMP` environment variable, so re-runs stay reproducible.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Input path -> SHA-256 digest of the file contents.
    pub inputs: BTreeMap<String, String>,
    /// Echo of the effective parameters.
    pub parameters: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            inputs: BTreeMap::new(),
            parameters: BTreeMap::new(),
            timestamp: std::env::var("EXPDIAG_TIMESTAMP").ok(),
        }
    }

    pub fn with_input(mut self, path: &Path) -> std::io::Result<Self> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(self)
    }

    pub fn with_parameter(mut self, key: &str, value: impl ToString) -> Self {
        self.parameters.insert(key.to_string(), value.to_string());
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// A schema-versioned report document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub schema_version: u32,
    pub manifest: RunManifest,
    pub payload: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(manifest: RunManifest, payload: T) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            manifest,
            payload,
        }
    }

    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut file, self)?;
        file.write_all(b"\n")?;
        file.flush()
    }
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex_string(&hasher.finalize()))
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Plain tabular plot data: tab-separated with a header row.
pub fn write_tsv<I>(path: &Path, header: &[&str], rows: I) -> std::io::Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "{}", header.join("\t"))?;
    for row in rows {
        writeln!(file, "{}", row.join("\t"))?;
    }
    file.flush()
}

/// Canonical float formatting for plot data: shortest round-trip form.
pub fn fmt_f64(v: f64) -> String {
    let mut buf = ryu_format(v);
    if buf.ends_with(".0") {
        buf.truncate(buf.len() - 2);
    }
    buf
}

fn ryu_format(v: f64) -> String {
    // serde_json uses ryu internally; reuse it for identical digits.
    serde_json::to_string(&v).unwrap_or_else(|_| v.to_string())
}
