//! Append-only JSON-lines ledger of stage runs with content hashes.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const LEDGER_FILE: &str = "ledger.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub sha256: String,
    pub bytes: u64,
}

impl FileRecord {
    pub fn of(path: &Path) -> Result<Self> {
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut hasher = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        let mut bytes = 0u64;
        loop {
            let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
            bytes += n as u64;
        }
        Ok(FileRecord {
            sha256: hex::encode(hasher.finalize()),
            bytes,
        })
    }

    /// Same size on disk; content is not re-read.
    pub fn plausibly_matches(&self, path: &Path) -> bool {
        std::fs::metadata(path).is_ok_and(|m| m.is_file() && m.len() == self.bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub stage: String,
    pub fingerprint: String,
    pub started: String,
    pub seconds: f64,
    pub cache_hit: bool,
    /// Keyed by path as given (external inputs) or relative to the output
    /// root (pipeline artifacts).
    pub inputs: BTreeMap<String, FileRecord>,
    /// Relative to the output root.
    pub outputs: BTreeMap<String, FileRecord>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunLedger {
    path: PathBuf,
}

impl RunLedger {
    pub fn at(output_root: &Path) -> Self {
        RunLedger {
            path: output_root.join(LEDGER_FILE),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn entries(&self) -> Result<Vec<LedgerEntry>> {
        let file = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&self.path, e)),
        };
        let mut out = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&self.path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(
                serde_json::from_str(&line)
                    .map_err(|e| Error::format(&self.path, format!("line {}: {e}", n + 1)))?,
            );
        }
        Ok(out)
    }

    /// Most recent entry for `stage`.
    pub fn latest(&self, stage: &str) -> Result<Option<LedgerEntry>> {
        Ok(self.entries()?.into_iter().rev().find(|e| e.stage == stage))
    }

    pub fn append(&self, entry: &LedgerEntry) -> Result<()> {
        if let Some(dir) = self.path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut line = serde_json::to_string(entry).map_err(|e| Error::format(&self.path, e))?;
        line.push('\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        file.write_all(line.as_bytes())
            .and_then(|_| file.sync_data())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Hash of a stage name, its configuration and its input hashes.
pub fn fingerprint(
    stage: &str,
    config: &serde_json::Value,
    inputs: &BTreeMap<String, FileRecord>,
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(stage.as_bytes());
    hasher.update([0]);
    hasher.update(config.to_string().as_bytes());
    for (name, rec) in inputs {
        hasher.update([0]);
        hasher.update(name.as_bytes());
        hasher.update([0]);
        hasher.update(rec.sha256.as_bytes());
    }
    hex::encode(hasher.finalize())
}
