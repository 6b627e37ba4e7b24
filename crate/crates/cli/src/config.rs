use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use redefix_core::harness::HarnessConfig;
use redefix_core::llm::LlmConfig;
use redefix_core::retriever::{EnsembleWeights, RetrieverConfig};
use redefix_core::sweep::SweepConfig;

pub const DEFAULT_CONFIG_FILE: &str = "redefix.toml";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub sweep: SweepConfig,
    pub kb_path: PathBuf,
    pub kb_page_cap: u32,
    pub weights: EnsembleWeights,
    pub top_k: usize,
    pub max_iterations: usize,
    pub n_majority: usize,
    pub llm: LlmConfig,
    /// Existing WebDriver server. When unset a local ChromeDriver is started.
    pub webdriver_endpoint: Option<String>,
    pub output_dir: PathBuf,
    pub harness: HarnessConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sweep: SweepConfig::default(),
            kb_path: PathBuf::from("redefix-kb"),
            kb_page_cap: 5,
            weights: EnsembleWeights::default(),
            top_k: 5,
            max_iterations: 5,
            n_majority: 5,
            llm: LlmConfig::default(),
            webdriver_endpoint: None,
            output_dir: PathBuf::from("redefix-out"),
            harness: HarnessConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path`, or `redefix.toml` in the working directory if present,
    /// else defaults. Secrets come from the environment only.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let implicit = Path::new(DEFAULT_CONFIG_FILE);
        let file = match path {
            Some(p) => Some(p),
            None if implicit.is_file() => Some(implicit),
            None => None,
        };
        let mut cfg: RunConfig = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        cfg.llm = cfg.llm.with_env_key();
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.sweep.validate()?;
        self.llm.validate()?;
        self.weights.validate()?;
        if self.top_k == 0 {
            bail!("top_k must be at least 1");
        }
        if self.max_iterations == 0 || self.n_majority == 0 {
            bail!("max_iterations and n_majority must be at least 1");
        }
        Ok(())
    }

    pub fn retriever(&self) -> RetrieverConfig {
        RetrieverConfig {
            weights: self.weights,
            top_k: self.top_k,
            ..RetrieverConfig::default()
        }
    }
}
