use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything needed to repeat a run. Written next to the primary output as
/// `<stem>.manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Command line, program name excluded; `rerun` parses it again.
    pub args: Vec<String>,
    /// Fully resolved parameters, defaults included.
    pub parameters: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub scenario_path: PathBuf,
    /// Scenario file contents at run time; `rerun` refuses to proceed if the
    /// file has changed since.
    pub scenario_text: String,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_secs: f64,
}

/// `dir/stem.<suffix>` for an output path `dir/stem.ext`.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    out.with_extension(suffix)
}

impl RunManifest {
    pub fn path_for(out: &Path) -> PathBuf {
        sibling(out, "manifest.json")
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf, CliError> {
        let path = Self::path_for(out);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
