//! Run manifests: every artifact a command writes gets a sidecar file
//! recording which command produced it, under which seed and config hash,
//! and the sha-256 of the artifact's bytes.
//!
//! Downstream commands verify the sidecar before consuming an artifact.
//! A missing sidecar is a missing input; a config-hash or content-hash
//! mismatch is an invariant violation. Manifests contain no timestamps,
//! so a rerun under the same config and seed reproduces them byte for
//! byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    /// Artifact file name (not path) to sha-256 hex of its content.
    pub hashes: BTreeMap<String, String>,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex(&h.finalize())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

/// Hash of the configuration slice the given command depends on. Scoping
/// the hash per command means changing, say, the learning rate does not
/// invalidate the ingested corpus, while rescoring with a different k1
/// still refuses to reuse stale rankings. Panics on a command with no
/// defined scope; use [`ExperimentConfig::scoped_kv`] directly when the
/// command string is untrusted.
pub fn config_hash(cfg: &ExperimentConfig, command: &str) -> String {
    let kv = cfg
        .scoped_kv(command)
        .unwrap_or_else(|| panic!("no config scope defined for command {command:?}"));
    sha256_bytes(kv.as_bytes())
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// The manifest sits next to the artifact with `.manifest` appended, so
/// `work/index.bin` pairs with `work/index.bin.manifest`.
pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut name = artifact
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest");
    artifact.with_file_name(name)
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Manifest {
            command: command.to_string(),
            seed: cfg.seed,
            config_hash: config_hash(cfg, command),
            hashes: BTreeMap::new(),
        }
    }

    pub fn record_file(&mut self, artifact: &Path) -> Result<()> {
        let name = artifact
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| CliError::Invariant(format!("unusable path {artifact:?}")))?;
        let digest = sha256_file(artifact)?;
        self.hashes.insert(name.to_string(), digest);
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "config_hash = {}", self.config_hash);
        for (name, digest) in &self.hashes {
            let _ = writeln!(s, "sha256.{name} = {digest}");
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv()).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut command = None;
        let mut seed = None;
        let mut config_hash = None;
        let mut hashes = BTreeMap::new();
        for line in text.lines() {
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Invariant(format!(
                    "{}: malformed manifest line {line:?}",
                    path.display()
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "command" => command = Some(value.to_string()),
                "seed" => {
                    seed = Some(value.parse().map_err(|e| {
                        CliError::Invariant(format!("{}: bad seed: {e}", path.display()))
                    })?)
                }
                "config_hash" => config_hash = Some(value.to_string()),
                _ => {
                    if let Some(name) = key.strip_prefix("sha256.") {
                        hashes.insert(name.to_string(), value.to_string());
                    } else {
                        return Err(CliError::Invariant(format!(
                            "{}: unknown manifest key {key:?}",
                            path.display()
                        )));
                    }
                }
            }
        }
        match (command, seed, config_hash) {
            (Some(command), Some(seed), Some(config_hash)) => Ok(Manifest {
                command,
                seed,
                config_hash,
                hashes,
            }),
            _ => Err(CliError::Invariant(format!(
                "{}: manifest missing command, seed, or config_hash",
                path.display()
            ))),
        }
    }
}

/// Write the sidecar manifest for a freshly produced artifact.
pub fn stamp(artifact: &Path, command: &str, cfg: &ExperimentConfig) -> Result<()> {
    let mut manifest = Manifest::new(command, cfg);
    manifest.record_file(artifact)?;
    manifest.write(&sidecar_path(artifact))
}

/// Check an artifact against its sidecar before consuming it: the sidecar
/// must exist, its config hash must match the current configuration over
/// the producing command's scope, and the artifact bytes must still match
/// the recorded digest.
pub fn verify(artifact: &Path, cfg: &ExperimentConfig) -> Result<Manifest> {
    if !artifact.exists() {
        return Err(CliError::MissingInput(format!(
            "{} (run the producing command first)",
            artifact.display()
        )));
    }
    let side = sidecar_path(artifact);
    if !side.exists() {
        return Err(CliError::MissingInput(format!(
            "{} has no manifest at {}",
            artifact.display(),
            side.display()
        )));
    }
    let manifest = Manifest::read(&side)?;
    let Some(scope) = cfg.scoped_kv(&manifest.command) else {
        return Err(CliError::Invariant(format!(
            "{}: manifest names unknown command {:?}",
            side.display(),
            manifest.command
        )));
    };
    let expected = sha256_bytes(scope.as_bytes());
    if manifest.config_hash != expected {
        return Err(CliError::ConfigMismatch {
            artifact: artifact.to_path_buf(),
            found: manifest.config_hash,
            expected,
        });
    }
    let name = artifact
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default();
    match manifest.hashes.get(name) {
        None => {
            return Err(CliError::Invariant(format!(
                "{}: manifest does not cover {name}",
                side.display()
            )))
        }
        Some(recorded) => {
            let actual = sha256_file(artifact)?;
            if *recorded != actual {
                return Err(CliError::Invariant(format!(
                    "{} changed since it was written (digest {actual}, manifest says {recorded})",
                    artifact.display()
                )));
            }
        }
    }
    Ok(manifest)
}
