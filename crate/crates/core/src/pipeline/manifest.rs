use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::Detection;
use crate::error::Result;
use crate::method::Method;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutputs {
    pub saliency: PathBuf,
    pub overlay: PathBuf,
    pub manifest: PathBuf,
}

/// Everything needed to re-run one explanation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Method name and its configuration with every default materialized.
    #[serde(flatten)]
    pub method: Method,
    pub seed: Option<u64>,
    /// Adapter spec as given on the command line.
    pub adapter_spec: String,
    /// Adapter self-description.
    pub adapter: String,
    pub image: PathBuf,
    pub input_size: [usize; 2],
    /// SHA-256 of the input file, hex.
    pub input_digest: String,
    pub target: Detection<f64>,
    /// Whether `target` was given by the caller rather than picked as the top box.
    pub target_given: bool,
    pub outputs: RunOutputs,
    pub timings: serde_json::Map<String, serde_json::Value>,
}

impl RunManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}
