//! Run manifests: what went in, what came out, and how the solver behaved.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

impl FileRecord {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(Error::file(path))?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Everything needed to rerun the command besides the inputs.
    pub config: Value,
    /// Input files by role. Paths are absolute.
    pub inputs: BTreeMap<String, FileRecord>,
    /// Output files by role. Paths are relative to the manifest.
    pub outputs: BTreeMap<String, FileRecord>,
    #[serde(default)]
    pub iterations: BTreeMap<String, usize>,
    #[serde(default)]
    pub objective_histories: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub timings_ms: BTreeMap<String, f64>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

impl RunManifest {
    pub fn new(command: &str, config: Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            iterations: BTreeMap::new(),
            objective_histories: BTreeMap::new(),
            timings_ms: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        let abs = fs::canonicalize(path).map_err(Error::file(path))?;
        self.inputs.insert(role.into(), FileRecord::of(&abs)?);
        Ok(())
    }

    /// Records `dir/name` under `role`.
    pub fn add_output(&mut self, role: &str, dir: &Path, name: &str) -> Result<()> {
        let sha256 = sha256_file(&dir.join(name))?;
        self.outputs.insert(
            role.into(),
            FileRecord {
                path: name.into(),
                sha256,
            },
        );
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST_NAME), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read(path).map_err(Error::file(path))?;
        serde_json::from_slice(&text).map_err(|e| Error::Format(format!("manifest {}: {e}", path.display())))
    }

    /// Checks that every input still hashes to its recorded value.
    pub fn verify_inputs(&self) -> Result<()> {
        for (role, rec) in &self.inputs {
            let now = sha256_file(Path::new(&rec.path))?;
            if now != rec.sha256 {
                return Err(Error::ReplayMismatch(format!(
                    "input {role} ({}) changed since the recorded run",
                    rec.path
                )));
            }
        }
        Ok(())
    }

    /// Checks that `other` produced the same outputs.
    pub fn compare_outputs(&self, other: &RunManifest) -> Result<()> {
        let mut diffs = Vec::new();
        for (role, rec) in &self.outputs {
            match other.outputs.get(role) {
                Some(o) if o.sha256 == rec.sha256 => {}
                Some(_) => diffs.push(format!("{role} differs")),
                None => diffs.push(format!("{role} missing")),
            }
        }
        for role in other.outputs.keys() {
            if !self.outputs.contains_key(role) {
                diffs.push(format!("{role} unexpected"));
            }
        }
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::ReplayMismatch(diffs.join(", ")))
        }
    }
}
