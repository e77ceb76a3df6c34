//! Run manifest written into every output directory: enough to reproduce
//! the run and audit its solves.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::Path;

/// Numeric outputs reproduce across runs to this tolerance; the solver is
/// deterministic in practice but not contractually bit-stable.
pub const NUMERIC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Serialize)]
pub struct SolveTiming {
    pub label: String,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// SHA-256 of the configuration file bytes (or of the rendered argument
    /// set when no config file is involved).
    pub config_hash: String,
    pub seed: u64,
    pub wall_clock_seconds: f64,
    pub solves: Vec<SolveTiming>,
    pub numeric_tolerance: f64,
}

impl RunManifest {
    pub fn new(command: &str, config_bytes: &[u8], seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: hex_digest(config_bytes),
            seed,
            wall_clock_seconds: 0.0,
            solves: Vec::new(),
            numeric_tolerance: NUMERIC_TOLERANCE,
        }
    }

    pub fn push_solve(&mut self, label: impl Into<String>, seconds: f64) {
        self.solves.push(SolveTiming {
            label: label.into(),
            seconds,
        });
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(dir.join("manifest.json"), text)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
