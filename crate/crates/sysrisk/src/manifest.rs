//! Run manifests: what was run, on which inputs, producing which bytes.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Job;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of_bytes(path: impl Into<String>, bytes: &[u8]) -> Self {
        FileDigest { path: path.into(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 }
    }

    pub fn of_file(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self::of_bytes(path.display().to_string(), &bytes))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Version of the per-sample seed derivation.
    pub seed_scheme_version: u32,
    pub job: Job,
    pub inputs: Vec<FileDigest>,
    /// Output files relative to the output directory; the manifest itself
    /// is not listed.
    pub outputs: Vec<FileDigest>,
    /// Seconds since the Unix epoch; informational only.
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(job: Job, inputs: Vec<FileDigest>, outputs: Vec<FileDigest>) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed_scheme_version: sysrisk_core::sdecm::SEED_SCHEME_VERSION,
            job,
            inputs,
            outputs,
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Format { path: path.into(), message: e.to_string() })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serialize");
        bytes.push(b'\n');
        fs::write(path, bytes).map_err(|e| CliError::io(path, e))
    }

    /// Checks that the recorded inputs still have the recorded digests.
    pub fn verify_inputs(&self) -> CliResult<()> {
        for d in &self.inputs {
            let now = FileDigest::of_file(Path::new(&d.path))?;
            if now.sha256 != d.sha256 {
                return Err(CliError::Validation(format!("input `{}` changed since the manifest was written", d.path)));
            }
        }
        Ok(())
    }
}
