//! Reproducibility metadata attached to every JSON output.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub git_hash: String,
    /// SHA-256 of the resolved config as TOML.
    pub config_hash: String,
    pub seed: u64,
    pub command: String,
}

impl Provenance {
    pub fn new(command: &str, config: &PipelineConfig) -> Self {
        Provenance {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            git_hash: env!("IFIELD_GIT_HASH").into(),
            config_hash: config_hash(config),
            seed: config.seed,
            command: command.into(),
        }
    }
}

pub fn config_hash(config: &PipelineConfig) -> String {
    hex::encode(Sha256::digest(config.to_toml().as_bytes()))
}

/// Envelope for JSON outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Document<T> {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub config: PipelineConfig,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Document<T> {
    pub fn new(command: &str, config: &PipelineConfig, body: T) -> Self {
        Document {
            schema_version: SCHEMA_VERSION,
            provenance: Provenance::new(command, config),
            config: config.clone(),
            body,
        }
    }
}
