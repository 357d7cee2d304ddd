use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fsio::write_atomic;
use qadapt::Result;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub path: PathBuf,
    pub seed: u64,
    pub samples: usize,
    pub noise_std: f64,
}

/// Everything needed to reproduce one command's outputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    /// Arguments after the subcommand, as given.
    pub args: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub num_layers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer_shapes: Option<Vec<(usize, usize)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<crate::args::Mode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(rename = "T1", skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(rename = "T2", skip_serializing_if = "Option::is_none")]
    pub fd_steps: Option<usize>,
    #[serde(rename = "U", skip_serializing_if = "Option::is_none")]
    pub segments: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetInfo>,
    pub outputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<serde_json::Value>,
    /// Wall-clock time of the command; not part of the reproducible output.
    pub wall_ms: u64,
}

impl RunManifest {
    pub fn new(command: &str, args: &[String]) -> Self {
        Self {
            schema_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args: args.to_vec(),
            ..Self::default()
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.schema_version != MANIFEST_VERSION {
            return Err(qadapt::Error::InvalidArgument(format!(
                "unsupported manifest version {}",
                m.schema_version
            )));
        }
        Ok(m)
    }
}

/// Manifest path written next to a single-file output.
pub fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
