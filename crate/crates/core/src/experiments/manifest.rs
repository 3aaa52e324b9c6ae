use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Record of one run: the configuration that produced it and every file written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    /// Hex SHA-256 of `config`.
    pub config_hash: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub failures: Vec<String>,
    /// Resolved configuration, as TOML.
    pub config: String,
}

pub fn config_hash(config: &str) -> String {
    let digest = Sha256::digest(config.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config: String, started_unix: u64) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash(&config),
            started_unix,
            finished_unix: started_unix,
            outputs: Vec::new(),
            failures: Vec::new(),
            config,
        }
    }

    pub fn add_output(&mut self, path: &Path) {
        let s = path.display().to_string();
        if !self.outputs.contains(&s) {
            self.outputs.push(s);
        }
    }

    /// Checks that the stored hash matches the stored configuration and that
    /// every listed output exists.
    pub fn verify(&self) -> Result<()> {
        if config_hash(&self.config) != self.config_hash {
            return Err(Error::Invalid("config hash does not match the stored config".into()));
        }
        if let Some(missing) = self.outputs.iter().find(|p| !Path::new(p).exists()) {
            return Err(Error::Invalid(format!("listed output {missing} is missing")));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn parse(text: &str) -> Result<RunManifest> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn write(&mut self, path: &Path) -> Result<()> {
        self.finished_unix = unix_now().max(self.started_unix);
        self.add_output(path);
        fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        RunManifest::parse(&fs::read_to_string(path)?)
    }
}
