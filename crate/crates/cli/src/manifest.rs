use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl SeedSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { n, mean, sd })
    }
}

/// Record of one invocation: resolved configuration, input and output
/// digests, seeds and results. Contains no timestamps, so repeated runs
/// produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub command: String,
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub seeds: Vec<u64>,
    pub outputs: Vec<FileDigest>,
    pub results: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<SeedSummary>,
}

impl RunManifest {
    pub fn new(command: &str, config: Value) -> Self {
        Self {
            tool: concat!("omr ", env!("CARGO_PKG_VERSION")).to_string(),
            command: command.to_string(),
            config,
            inputs: Vec::new(),
            seeds: Vec::new(),
            outputs: Vec::new(),
            results: Value::Null,
            summary: None,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(digest(path, &bytes));
        Ok(())
    }

    /// Writes `bytes` to `path`, creating parent directories, and records it.
    pub fn output(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(digest(path, bytes));
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

fn digest(path: &Path, bytes: &[u8]) -> FileDigest {
    FileDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(bytes)),
    }
}

/// `<file>.manifest.json` next to a single-file output.
pub fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let s = SeedSummary::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.n, s.mean, s.sd), (3, 2.0, 1.0));
        assert_eq!(SeedSummary::of(&[0.5]).unwrap().sd, 0.0);
        assert!(SeedSummary::of(&[]).is_none());
    }

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(
            manifest_path_for(Path::new("a/split.json")),
            Path::new("a/split.json.manifest.json")
        );
    }
}
