//! On-disk formats: the scene description (TOML), delimited tables for
//! detections, trajectories, latents, controls, assignments, energy traces and
//! sweep results, and the per-run manifest.
//!
//! Every writer is deterministic and every reader accepts exactly what the
//! matching writer produces; floats are written with 17 significant digits so
//! a read followed by a write reproduces the file byte for byte.

mod manifest;
mod scene;
mod tables;

pub use manifest::{sha256_hex, write_timings, Manifest, MANIFEST_FILE, TIMINGS_FILE};
pub use scene::{CameraEntry, SceneFile, SCHEMA_VERSION};
pub use tables::{
    read_assignment, read_controls, read_detections, read_latent, read_sweep_rows, read_trajectory, write_assignment, write_controls,
    write_detections, write_latent, write_sweep_rows, write_trace, write_trajectory,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("{0}")]
    Format(String),
    #[error("unsupported schema version {found}, expected {expected}")]
    Schema { found: u32, expected: u32 },
}

impl IoError {
    fn parse(line: u64, message: impl Into<String>) -> Self {
        IoError::Parse { line, message: message.into() }
    }
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

/// Writes `contents`, creating parent directories as needed.
pub fn write_text(path: &Path, contents: &str) -> Result<(), IoError> {
    let io = |source| IoError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, contents).map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

/// Float formatting shared by all tables: 17 significant digits.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
