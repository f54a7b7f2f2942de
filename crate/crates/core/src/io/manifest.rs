use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{write_text, IoError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.csv";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Run record: command, configuration, seed and a hash per artifact. Holds
/// no timestamps or timings, so identical runs produce identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// Artifact file name to sha256 of its contents.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, seed: Option<u64>, config: &impl Serialize) -> Self {
        Self {
            command: command.into(),
            seed,
            config: serde_json::to_value(config).expect("configurations serialize to JSON"),
            artifacts: BTreeMap::new(),
        }
    }

    /// Writes `contents` to `dir/name` and records its hash.
    pub fn write_artifact(&mut self, dir: &Path, name: &str, contents: &str) -> Result<(), IoError> {
        write_text(&dir.join(name), contents)?;
        self.artifacts.insert(name.into(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifests serialize");
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &Path) -> Result<(), IoError> {
        write_text(&dir.join(MANIFEST_FILE), &self.to_json())
    }
}

/// Wall-clock durations per stage, kept apart from the manifest.
pub fn write_timings(dir: &Path, stages: &[(&str, f64)]) -> Result<(), IoError> {
    let mut s = String::from("stage,seconds\n");
    for (name, secs) in stages {
        let _ = writeln!(s, "{name},{secs:.6}");
    }
    write_text(&dir.join(TIMINGS_FILE), &s)
}
