//! Run manifest written next to every output set.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Serialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub status: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: Option<Value>,
    pub counts: BTreeMap<String, u64>,
    pub outputs: Vec<String>,
    pub error: Option<ErrorInfo>,
}

impl Manifest {
    pub fn new(command: &str, seed: Option<u64>) -> Self {
        Manifest {
            command: command.to_string(),
            status: "ok".to_string(),
            version: format!("v{}", env!("CARGO_PKG_VERSION")),
            seed,
            config: None,
            counts: BTreeMap::new(),
            outputs: Vec::new(),
            error: None,
        }
    }

    pub fn fail(&mut self, kind: &str, message: &str) {
        self.status = "error".to_string();
        self.error = Some(ErrorInfo { kind: kind.to_string(), message: message.to_string() });
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        fs::write(dir.join("manifest.json"), text + "\n")
    }
}
