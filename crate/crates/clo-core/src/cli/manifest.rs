//! Run manifests: every command records its resolved configuration plus
//! content hashes of its inputs and outputs, so a run can be re-executed
//! and verified byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::sha256_hex;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub run_id: String,
    pub command: String,
    /// Resolved command arguments (after flag overrides).
    pub args: BTreeMap<String, String>,
    /// Snapshot of the run configuration the command executed with.
    pub config: serde_json::Value,
    /// Absolute input paths and their content hashes.
    pub inputs: BTreeMap<String, String>,
    /// Output file names (relative to the command's output location) and
    /// their content hashes.
    pub outputs: BTreeMap<String, String>,
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(sha256_hex(&bytes))
}

impl Manifest {
    pub fn new(run_id: &str, command: &str, config: serde_json::Value) -> Self {
        Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            run_id: run_id.to_string(),
            command: command.to_string(),
            args: BTreeMap::new(),
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn arg(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.args.insert(key.to_string(), value.to_string());
        self
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let canonical = path
            .canonicalize()
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        self.inputs
            .insert(canonical.display().to_string(), hash_file(path)?);
        Ok(())
    }

    pub fn record_output(&mut self, name: &str, path: &Path) -> Result<()> {
        self.outputs.insert(name.to_string(), hash_file(path)?);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path)?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Integrity(format!("malformed manifest: {e}")))?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: m.schema_version,
                expected: MANIFEST_SCHEMA_VERSION,
            });
        }
        Ok(m)
    }

    /// Verifies that every recorded input still exists with the recorded
    /// content.
    pub fn verify_inputs(&self) -> Result<()> {
        for (path, expected) in &self.inputs {
            let actual = hash_file(Path::new(path))?;
            if actual != *expected {
                return Err(Error::Integrity(format!(
                    "input {path} changed since the manifest was written"
                )));
            }
        }
        Ok(())
    }

    /// Verifies freshly produced outputs in `dir` against the recorded
    /// hashes.
    pub fn verify_outputs_in(&self, dir: &Path) -> Result<()> {
        for (name, expected) in &self.outputs {
            let path = dir.join(name);
            let actual = hash_file(&path)?;
            if actual != *expected {
                return Err(Error::Integrity(format!(
                    "output {name} differs from the recorded hash"
                )));
            }
        }
        Ok(())
    }
}

/// Conventional manifest location for a primary output file.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    name.push_str(".manifest.json");
    output.with_file_name(name)
}
