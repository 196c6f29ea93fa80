//! Pipeline configuration loaded from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{LossConfig, TrainConfig};
use crate::code_ingest::CodeConfig;
use crate::dataset::{SamplingConfig, Split};
use crate::embedding::ProviderConfig;
use crate::error::{Error, Result};
use crate::eval::validate_grid;
use crate::paper_ingest::KeywordConfig;
use crate::records::digest_of;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { k: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnotationConfig {
    pub required_annotators: usize,
    /// Show retrieval scores to annotators.
    pub show_scores: bool,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        AnnotationConfig {
            required_annotators: 3,
            show_scores: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub ratios: [u32; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { ratios: [8, 1, 1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceConfig {
    pub token_budget: usize,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig { token_budget: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub grid: Vec<f64>,
    pub threshold: f64,
    pub sweep_split: Split,
    pub allow_test_sweep: bool,
    pub eval_split: Split,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            grid: crate::eval::DEFAULT_GRID.to_vec(),
            threshold: 0.5,
            sweep_split: Split::Validation,
            allow_test_sweep: false,
            eval_split: Split::Test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Base seed for splitting, sampling and training.
    pub seed: u64,
    pub paper: KeywordConfig,
    pub code: CodeConfig,
    pub embedding: ProviderConfig,
    pub retrieval: RetrievalConfig,
    pub annotation: AnnotationConfig,
    pub sampling: SamplingConfig,
    pub split: SplitConfig,
    pub sequence: SequenceConfig,
    pub loss: LossConfig,
    pub training: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 42,
            paper: KeywordConfig::default(),
            code: CodeConfig::default(),
            embedding: ProviderConfig::default(),
            retrieval: RetrievalConfig::default(),
            annotation: AnnotationConfig::default(),
            sampling: SamplingConfig::default(),
            split: SplitConfig::default(),
            sequence: SequenceConfig::default(),
            loss: LossConfig::default(),
            training: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// The shipped default configuration, with the origin of each value.
pub const DEFAULT_CONFIG: &str = include_str!("../default_config.toml");

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text).map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.paper.validate()?;
        self.embedding.validate()?;
        self.sampling.validate()?;
        self.loss.validate()?;
        self.training.validate()?;
        validate_grid(&self.eval.grid)?;
        if self.retrieval.k == 0 {
            return Err(Error::validation("retrieval.k must be > 0"));
        }
        if self.retrieval.k < self.sampling.hard_rank_band[1] {
            return Err(Error::validation(format!(
                "retrieval.k = {} does not cover the hard band ending at rank {}",
                self.retrieval.k, self.sampling.hard_rank_band[1]
            )));
        }
        if self.annotation.required_annotators == 0 {
            return Err(Error::validation("annotation.required_annotators must be >= 1"));
        }
        if self.split.ratios.contains(&0) {
            return Err(Error::validation("split.ratios must all be positive"));
        }
        if self.sequence.token_budget < 4 {
            return Err(Error::validation("sequence.token_budget must be at least 4"));
        }
        if !(self.eval.threshold > 0.0 && self.eval.threshold < 1.0) {
            return Err(Error::validation("eval.threshold must lie in (0, 1)"));
        }
        if self.code.source_extensions.is_empty() {
            return Err(Error::validation("code.source_extensions is empty"));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        digest_of(self)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::validation(format!("config: {e}")))
    }
}
