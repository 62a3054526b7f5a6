use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Clone, Debug, Serialize)]
pub struct FileRecord {
    pub path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

/// Record of one command invocation: what it read, what it was told, what it
/// wrote.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub status: RunStatus,
    /// Config file contents as read, before flag overrides.
    pub config_file: Option<Value>,
    /// Flags that replaced config values.
    pub overrides: BTreeMap<String, Value>,
    /// Effective configuration.
    pub config: Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    location: PathBuf,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes through a sibling temporary file so readers never see a partial
/// file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| {
            let _ = fs::remove_file(&tmp);
            CliError::usage(format!("cannot write {}: {e}", path.display()))
        })
}

impl RunManifest {
    pub fn new(command: &str, out_dir: &Path) -> Self {
        Self {
            command: command.into(),
            status: RunStatus::Running,
            config_file: None,
            overrides: BTreeMap::new(),
            config: Value::Null,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            error: None,
            location: out_dir.join("manifest.json"),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.push(FileRecord {
            path: path.display().to_string(),
            sha256: Some(sha256_file(path)?),
        });
        Ok(())
    }

    pub fn planned_output(&mut self, path: &Path) {
        self.outputs.push(FileRecord {
            path: path.display().to_string(),
            sha256: None,
        });
    }

    pub fn save(&self) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&self.location, text.as_bytes())
    }

    /// Checksums every planned output and marks the run complete.
    pub fn complete(&mut self) -> Result<(), CliError> {
        for out in &mut self.outputs {
            out.sha256 = Some(sha256_file(Path::new(&out.path))?);
        }
        self.status = RunStatus::Complete;
        self.save()
    }

    /// Removes any outputs written so far and records the failure.
    pub fn fail(&mut self, err: &CliError) {
        for out in &self.outputs {
            let _ = fs::remove_file(&out.path);
        }
        self.status = RunStatus::Failed;
        self.error = Some(err.message.clone());
        let _ = self.save();
    }
}
