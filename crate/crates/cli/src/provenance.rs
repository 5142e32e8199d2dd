//! Provenance stamped onto every artifact.

use std::fmt::Write as _;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    /// SHA-256 of the resolved configuration serialized as JSON.
    pub config_sha256: String,
}

impl Provenance {
    pub fn new(command: &str, seed: u64, config: &impl Serialize) -> Self {
        let json = serde_json::to_vec(config).expect("configuration serializes");
        let digest = Sha256::digest(&json);
        let mut hex = String::with_capacity(64);
        for b in digest {
            let _ = write!(hex, "{b:02x}");
        }
        Provenance {
            tool: "ratecate",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            config_sha256: hex,
        }
    }

    /// Comment line placed at the top of CSV artifacts.
    pub fn csv_header(&self) -> String {
        format!(
            "# {} {} command={} seed={} config_sha256={}\n",
            self.tool, self.version, self.command, self.seed, self.config_sha256
        )
    }
}
