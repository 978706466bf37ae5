use std::path::{Path, PathBuf};

use pricerule::evo::EvoConfig;
use pricerule::fitness::FitnessConfig;
use pricerule::pipeline::PipelineConfig;
use pricerule::proposer::{IterateConfig, MctsConfig};
use pricerule::rl::RlConfig;
use pricerule::sim::{ClusteringConfig, LowRankConfig, WorldConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Evo,
    Rl,
    Mcts,
    LlmIterate,
    TwoPhase,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Evo => "evo",
            Method::Rl => "rl",
            Method::Mcts => "mcts",
            Method::LlmIterate => "llm-iterate",
            Method::TwoPhase => "two-phase",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentBy {
    K1,
    Customer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    /// Sales volume threshold in currency.
    pub b_t: f64,
    pub p_t: f64,
    pub deploy_seed: u64,
    pub methods: Vec<Method>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            b_t: 6.0e6,
            p_t: 5.0e5,
            deploy_seed: 7,
            methods: vec![Method::Evo, Method::Rl, Method::Mcts, Method::LlmIterate],
        }
    }
}

/// Everything a command reads. Loaded from TOML, then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub golden: Option<PathBuf>,
    pub rule: Option<PathBuf>,
    pub lock_file: Option<PathBuf>,
    pub traces: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub method: Method,
    pub budget: usize,
    /// Overrides every backend seed when set.
    pub seed: Option<u64>,
    pub threads: usize,
    /// `mock` or an endpoint URL.
    pub proposer: String,
    pub default_beta: f64,
    pub segment: SegmentBy,
    pub xi: f64,
    pub world: WorldConfig,
    pub fitness: FitnessConfig,
    pub evo: EvoConfig,
    pub rl: RlConfig,
    pub mcts: MctsConfig,
    pub iterate: IterateConfig,
    pub pipeline: PipelineConfig,
    pub lowrank: LowRankConfig,
    pub clustering: ClusteringConfig,
    pub compare: CompareConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            truth: None,
            golden: None,
            rule: None,
            lock_file: None,
            traces: Vec::new(),
            out: None,
            method: Method::Evo,
            budget: 50,
            seed: None,
            threads: 0,
            proposer: "mock".into(),
            default_beta: 0.2,
            segment: SegmentBy::K1,
            xi: 0.1,
            world: WorldConfig {
                customers: 2362,
                skus: 104,
                ..WorldConfig::default()
            },
            fitness: FitnessConfig::default(),
            evo: EvoConfig::default(),
            rl: RlConfig::default(),
            mcts: MctsConfig::default(),
            iterate: IterateConfig::default(),
            pipeline: PipelineConfig::default(),
            lowrank: LowRankConfig::default(),
            clustering: ClusteringConfig::default(),
            compare: CompareConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Pushes the shared seed into every backend.
    pub fn resolve_seeds(&mut self) {
        if let Some(s) = self.seed {
            self.world.seed = s;
            self.evo.seed = s;
            self.rl.seed = s;
            self.mcts.seed = s;
        }
    }

    pub fn require<'a>(&self, p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
        let p = p.as_deref().ok_or_else(|| CliError::Config(format!("missing --{flag}")))?;
        if !p.exists() {
            return Err(CliError::Config(format!("--{flag} {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out.as_deref().ok_or_else(|| CliError::Config("missing --out".into()))
    }

    /// Environment endpoint beats the file, an explicit flag beats both.
    pub fn apply_proposer_env(&mut self, flag_given: bool) {
        if flag_given {
            return;
        }
        if let Ok(url) = std::env::var(pricerule::proposer::PROPOSER_URL_ENV) {
            if !url.is_empty() {
                self.proposer = url;
            }
        }
    }
}
