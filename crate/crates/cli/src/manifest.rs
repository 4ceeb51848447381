//! Run manifest and the output directory it inventories.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub k1_declared: f64,
    pub k1_measured: Option<f64>,
    pub k1_v_measured: Option<f64>,
    pub k2_declared: f64,
    pub k2_measured: Option<f64>,
    pub trace_q: f64,
    /// Per noise level when estimated; a single entry when overridden.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub c_hat: Vec<f64>,
    pub i_star: Option<f64>,
    pub i_d1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub library_version: String,
    pub config: RunConfig,
    /// Purpose tags of the derived seed streams, keyed by consumer.
    pub seeds: BTreeMap<String, String>,
    pub wall_clock_seconds: f64,
    pub workers: usize,
    pub constants: Constants,
    pub unreliable: bool,
    pub findings: Vec<String>,
    pub outputs: Vec<OutputFile>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut de = serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let at = e.path().to_string();
            CliError::Config(format!("manifest at `{at}`: {}", e.into_inner()))
        })
    }

    /// True when the JSON text looks like a manifest rather than a config.
    pub fn sniff(text: &str) -> bool {
        serde_json::from_str::<serde_json::Value>(text)
            .map(|v| v.get("manifest_version").is_some() && v.get("config").is_some())
            .unwrap_or(false)
    }
}

/// Writer confined to one directory. File names may not contain path
/// separators, so nothing escapes the directory.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<OutputFile>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Write `name` with the bytes produced by `fill`, recording its checksum.
    pub fn write_with<F>(&mut self, name: &str, fill: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
            return Err(CliError::Io(format!(
                "refusing to write `{name}` outside the output directory"
            )));
        }
        let mut buf = Vec::new();
        fill(&mut buf)?;
        let path = self.root.join(name);
        let mut f = std::fs::File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        f.write_all(&buf)?;
        self.written.retain(|o| o.file != name);
        self.written.push(OutputFile {
            file: name.to_string(),
            bytes: buf.len() as u64,
            sha256: sha256_hex(&buf),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.push(b'\n');
            Ok(())
        })
    }

    pub fn into_outputs(self) -> Vec<OutputFile> {
        self.written
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
