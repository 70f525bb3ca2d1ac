//! Run directory bookkeeping: every artifact a stage writes is recorded with
//! its content hash so later stages can check what they read and refuse to
//! clobber files changed behind the tool's back.

use crate::CliError;
use drlir_core::persist::atomic_write;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Events,
    Model,
    IdMap,
    Index,
    Checkpoint,
    Config,
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory.
    pub path: String,
    pub kind: Kind,
    pub sha256: String,
    pub stage: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    /// Hash of the configuration of the most recent stage.
    pub config_hash: String,
    pub artifacts: BTreeMap<String, Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(seed: u64) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_hash: String::new(),
            artifacts: BTreeMap::new(),
        }
    }

    /// Loads the manifest of `dir`, or a fresh one when there is none yet.
    pub fn load_or_new(dir: &Path, seed: u64) -> Result<Self, CliError> {
        let path = dir.join(FILE_NAME);
        if !path.exists() {
            return Ok(RunManifest::new(seed));
        }
        let text = fs::read_to_string(&path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
        let mut m: RunManifest =
            serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
        m.seed = seed;
        m.tool_version = env!("CARGO_PKG_VERSION").to_string();
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(&dir.join(FILE_NAME), text.as_bytes())
    }

    /// Refuses to replace a file the manifest did not write or whose
    /// contents changed since it was recorded.
    pub fn guard(&self, dir: &Path, rel: &str, force: bool) -> Result<(), CliError> {
        let path = dir.join(rel);
        if force || !path.exists() {
            return Ok(());
        }
        let bytes = fs::read(&path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
        let recorded = self.artifacts.values().find(|a| a.path == rel);
        match recorded {
            Some(a) if a.sha256 == sha256_hex(&bytes) => Ok(()),
            _ => {
                let modified = fs::metadata(&path)
                    .and_then(|m| m.modified())
                    .map(|t| format!("{t:?}"))
                    .unwrap_or_else(|_| "unknown".into());
                Err(CliError::invalid(format!(
                    "refusing to overwrite {} (modified {modified}, not the recorded version); pass --force to replace it",
                    path.display()
                )))
            }
        }
    }

    /// Writes an artifact atomically and records it.
    #[allow(clippy::too_many_arguments)]
    pub fn put(
        &mut self,
        dir: &Path,
        name: &str,
        rel: &str,
        kind: Kind,
        bytes: &[u8],
        stage: &str,
        config_hash: &str,
    ) -> Result<(), CliError> {
        write_file(&dir.join(rel), bytes)?;
        self.artifacts.insert(
            name.to_string(),
            Artifact {
                path: rel.to_string(),
                kind,
                sha256: sha256_hex(bytes),
                stage: stage.to_string(),
                config_hash: config_hash.to_string(),
            },
        );
        self.config_hash = config_hash.to_string();
        Ok(())
    }

    /// Checks that every recorded file exists, still has its recorded hash
    /// and passes its format's header check.
    pub fn verify(&self, dir: &Path) -> Result<(), CliError> {
        for (name, a) in &self.artifacts {
            let path = dir.join(&a.path);
            let bytes = fs::read(&path)
                .map_err(|e| CliError::invalid(format!("artifact {name} ({}): {e}", path.display())))?;
            if sha256_hex(&bytes) != a.sha256 {
                return Err(CliError::invalid(format!("artifact {name} ({}) changed since it was written", path.display())));
            }
            check_header(a.kind, &bytes).map_err(|m| CliError::invalid(format!("artifact {name}: {m}")))?;
        }
        Ok(())
    }
}

fn check_header(kind: Kind, bytes: &[u8]) -> Result<(), String> {
    let starts = |magic: &[u8]| {
        if bytes.starts_with(magic) {
            Ok(())
        } else {
            Err(format!("missing {} header", String::from_utf8_lossy(magic)))
        }
    };
    match kind {
        Kind::Events => starts(b"user,item,rating,timestamp"),
        Kind::Model => starts(b"DRLIRPMF"),
        Kind::Index => starts(b"DRLIRANN"),
        Kind::Checkpoint => starts(b"DRLIRCKP"),
        Kind::IdMap | Kind::Json => serde_json::from_slice::<serde_json::Value>(bytes)
            .map(|_| ())
            .map_err(|e| e.to_string()),
        Kind::Csv | Kind::Config => std::str::from_utf8(bytes).map(|_| ()).map_err(|e| e.to_string()),
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::invalid(format!("{}: {e}", parent.display())))?;
    }
    atomic_write(path, bytes).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

/// Path of an input artifact, or a usage error naming the stage that makes it.
pub fn input(dir: &Path, rel: &str, made_by: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(rel);
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::usage(format!(
            "missing input {}; run `drlir {made_by}` first",
            path.display()
        )))
    }
}
