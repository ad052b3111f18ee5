//! On-disk formats shared by the pipeline stages and the CLI.

mod actions;
mod image;
mod table;

pub use actions::{
    actions_csv_bytes, actions_jsonl_bytes, actions_to_records, read_actions_csv, read_actions_jsonl, records_to_actions, write_actions_csv,
    write_actions_jsonl, ActionRecord, ACTION_CSV_HEADER,
};
pub use image::{parse_pfm, pfm_bytes, pgm_bytes, read_depth, read_pfm, read_pgm, read_tool_mask, write_pfm, write_pgm, write_tool_mask};
pub use table::{
    read_frame_vectors, read_frame_vectors_bin, read_frame_vectors_csv, read_pose_sequence, read_tracks_csv, tracks_csv_bytes,
    write_frame_vectors_bin, write_frame_vectors_csv, write_pose_sequence, write_tracks_csv, PoseRecord,
};

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;

impl IoError {
    pub(crate) fn format(path: &Path, message: impl Into<String>) -> Self {
        IoError::Format { path: path.to_path_buf(), message: message.into() }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| IoError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| IoError::format(path, e.to_string()))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError::format(path, e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}
