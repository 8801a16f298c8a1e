use std::path::Path;

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration ({} problems)", .0.len())]
    Config(Vec<String>),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: {message}")]
    Input { path: String, message: String },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(vec![msg.into()])
    }

    pub fn io(path: &Path, e: impl ToString) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn input(path: &Path, e: impl ToString) -> Self {
        Self::Input {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn failed(e: impl ToString) -> Self {
        Self::Failed(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Io { .. } | Self::Input { .. } => 3,
            Self::Failed(_) => 1,
        }
    }

    pub fn to_json(&self) -> String {
        let value = match self {
            Self::Config(problems) => json!({
                "error": "config",
                "message": self.to_string(),
                "problems": problems,
            }),
            Self::Io { path, message } => json!({
                "error": "io",
                "path": path,
                "message": message,
            }),
            Self::Input { path, message } => json!({
                "error": "input",
                "path": path,
                "message": message,
            }),
            Self::Failed(message) => json!({
                "error": "failed",
                "message": message,
            }),
        };
        value.to_string()
    }
}
