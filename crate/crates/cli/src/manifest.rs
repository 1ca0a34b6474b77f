//! Run manifests, partial-output markers, and the JSONL event log.
//!
//! Every command writes a `.partial` marker into the output directory
//! before touching anything and removes it on success, so interrupted runs
//! are detectable. The manifest records the config hash, the seed, and an
//! FNV-1a checksum per artifact; two runs of the same deterministic config
//! produce identical manifests.

use crate::CliError;
use serde_json::{json, Map, Value};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

fn fnv64_stream(path: &Path) -> std::io::Result<(u64, u64)> {
    use std::io::Read;
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut len = 0u64;
    let mut file = File::open(path)?;
    let mut buf = [0u8; 8192];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        len += n as u64;
        for &b in &buf[..n] {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    Ok((hash, len))
}

pub struct PartialMarker {
    path: PathBuf,
}

impl PartialMarker {
    /// Drops a `.partial` marker in `dir`; call [`PartialMarker::complete`]
    /// once every output landed.
    pub fn begin(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Data(format!("create {}: {e}", dir.display())))?;
        let path = dir.join(".partial");
        std::fs::write(&path, b"run in progress\n")
            .map_err(|e| CliError::Data(format!("write {}: {e}", path.display())))?;
        Ok(PartialMarker { path })
    }

    pub fn complete(self) -> Result<(), CliError> {
        std::fs::remove_file(&self.path)
            .map_err(|e| CliError::Data(format!("remove {}: {e}", self.path.display())))
    }
}

/// Writes `manifest.json`: config hash, seed, and checksums of the named
/// artifacts (paths relative to the output directory). Artifact order is
/// sorted for byte-stable output.
pub fn write_manifest(
    dir: &Path,
    config_hash: &str,
    seed: u64,
    artifacts: &[&str],
) -> Result<(), CliError> {
    let mut entries = Map::new();
    let mut names: Vec<&str> = artifacts.to_vec();
    names.sort_unstable();
    for name in names {
        let path = dir.join(name);
        if !path.exists() {
            continue;
        }
        let (hash, bytes) = fnv64_stream(&path)
            .map_err(|e| CliError::Data(format!("checksum {}: {e}", path.display())))?;
        entries.insert(
            name.to_string(),
            json!({ "fnv64": format!("{hash:016x}"), "bytes": bytes }),
        );
    }
    let manifest = json!({
        "config_hash": config_hash,
        "seed": seed,
        "artifacts": Value::Object(entries),
    });
    let path = dir.join("manifest.json");
    let mut f = File::create(&path)
        .map_err(|e| CliError::Data(format!("write {}: {e}", path.display())))?;
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Data(format!("manifest serialization: {e}")))?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .map_err(|e| CliError::Data(format!("write {}: {e}", path.display())))?;
    Ok(())
}

/// Line-oriented JSON event log (`run.log.jsonl`), append-only. Events
/// carry wall-clock timestamps, so the log itself is not part of the
/// deterministic artifact set.
pub struct RunLog {
    file: File,
}

impl RunLog {
    pub fn open(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Data(format!("create {}: {e}", dir.display())))?;
        let path = dir.join("run.log.jsonl");
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| CliError::Data(format!("open {}: {e}", path.display())))?;
        Ok(RunLog { file })
    }

    pub fn event(&mut self, stage: &str, event: &str, fields: Value) {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        let mut obj = Map::new();
        obj.insert("ts_ms".into(), json!(ts as u64));
        obj.insert("stage".into(), json!(stage));
        obj.insert("event".into(), json!(event));
        if let Value::Object(extra) = fields {
            for (k, v) in extra {
                obj.insert(k, v);
            }
        }
        let line = Value::Object(obj).to_string();
        let _ = writeln!(self.file, "{line}");
        eprintln!("{line}");
    }
}
