use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;

/// Artifact layout under the output directory.
pub struct Workspace {
    pub root: PathBuf,
    dataset: Option<PathBuf>,
}

impl Workspace {
    pub fn new(root: PathBuf, dataset: Option<PathBuf>) -> Self {
        Self { root, dataset }
    }

    pub fn dataset(&self) -> PathBuf {
        self.dataset
            .clone()
            .unwrap_or_else(|| self.root.join("dataset.json"))
    }

    pub fn ground_truth(&self) -> PathBuf {
        self.root.join("ground_truth.json")
    }

    pub fn splits(&self) -> PathBuf {
        self.root.join("splits.json")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.json")
    }

    pub fn gradcheck(&self) -> PathBuf {
        self.root.join("gradcheck.json")
    }

    pub fn fold(&self, k: usize) -> PathBuf {
        self.root.join(format!("fold_{k}"))
    }

    pub fn fold_file(&self, k: usize, name: &str) -> PathBuf {
        self.fold(k).join(name)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::input(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::input(path, e))
}
