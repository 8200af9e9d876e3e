use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::sha256_hex;

pub const MANIFEST: &str = "manifest.json";
pub const ERROR_RECORD: &str = "error.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    /// Relative to the artifact directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// Hash of the stage's configuration and of every input it read.
    pub key: String,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub outputs: Vec<OutputRecord>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Option<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(dir.join(MANIFEST), text)
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn output(&self, path: &str) -> Option<&OutputRecord> {
        self.outputs.iter().find(|o| o.path == path)
    }

    pub fn outputs_of<'a>(&'a self, stage: &'a str) -> impl Iterator<Item = &'a OutputRecord> + 'a {
        self.outputs.iter().filter(move |o| o.stage == stage)
    }

    /// Whether `stage` already ran with `key` and its outputs are intact.
    pub fn is_current(&self, dir: &Path, stage: &str, key: &str) -> bool {
        let Some(rec) = self.stage(stage) else {
            return false;
        };
        rec.key == key
            && rec.outputs.iter().all(|p| {
                let Some(out) = self.output(p) else {
                    return false;
                };
                file_hash(&dir.join(p)).is_some_and(|h| h == out.sha256)
            })
    }
}

pub fn file_hash(path: &Path) -> Option<String> {
    std::fs::read(path).ok().map(|b| sha256_hex(&b))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub stage: String,
    pub message: String,
    pub config_hash: String,
    pub seed: u64,
}
