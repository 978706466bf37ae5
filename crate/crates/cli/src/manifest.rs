use std::collections::BTreeMap;
use std::path::Path;

use pricerule::fingerprint::{fingerprint, sha256_hex};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "run-manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: RunConfig,
    pub config_fingerprint: String,
    pub dataset_fingerprint: Option<String>,
    pub seeds: BTreeMap<String, u64>,
    pub threads: usize,
    pub versions: BTreeMap<String, String>,
    /// sha256 per output file name.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig, dataset_fingerprint: Option<String>) -> Self {
        let seeds = [
            ("world", cfg.world.seed),
            ("evo", cfg.evo.seed),
            ("rl", cfg.rl.seed),
            ("mcts", cfg.mcts.seed),
            ("deploy", cfg.compare.deploy_seed),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let versions = [
            ("pricerule", pricerule::VERSION),
            ("pricerule-cli", env!("CARGO_PKG_VERSION")),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Self {
            command: command.to_string(),
            config: cfg.clone(),
            config_fingerprint: fingerprint(cfg),
            dataset_fingerprint,
            seeds,
            threads: cfg.threads,
            versions,
            outputs: BTreeMap::new(),
        }
    }

    pub fn hash_outputs(&mut self, dir: &Path, files: &[String]) -> Result<(), CliError> {
        for f in files {
            let p = dir.join(f);
            let bytes = std::fs::read(&p).map_err(|e| CliError::io(&p, e))?;
            self.outputs.insert(f.clone(), sha256_hex(&bytes));
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let p = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(&p, text + "\n").map_err(|e| CliError::io(&p, e))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}
