//! Flat JSON pipeline configuration.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activation::ActivationConfig;
use crate::graphstore::{FusionParams, SynonymTable};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config value `{key}`: {message}")]
    Invalid { key: &'static str, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorChoice {
    Mock,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingChoice {
    Builtin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub tau: f64,
    pub alpha: f64,
    pub penalty_f: f64,
    pub dim: usize,
    pub epsilon: f64,
    pub cap_dynamic: usize,
    pub cap_static: usize,
    pub relevance_floor: Option<f64>,
    pub max_depth: u32,
    pub query_budget: usize,
    pub disease_lexicon: Option<PathBuf>,
    pub synonym_table: Option<PathBuf>,
    pub extractor: ExtractorChoice,
    pub embedding: EmbeddingChoice,
    /// Remote extractor endpoint URL; required when `extractor` is `remote`.
    pub remote_endpoint: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tau: 0.5,
            alpha: 0.9,
            penalty_f: 1.0,
            dim: 256,
            epsilon: 1e-8,
            cap_dynamic: 5,
            cap_static: 5,
            relevance_floor: None,
            max_depth: 2,
            query_budget: 100,
            disease_lexicon: None,
            synonym_table: None,
            extractor: ExtractorChoice::Mock,
            embedding: EmbeddingChoice::Builtin,
            remote_endpoint: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: PipelineConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn invalid(key: &'static str, message: &str) -> Result<(), ConfigError> {
            Err(ConfigError::Invalid {
                key,
                message: message.to_string(),
            })
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return invalid("tau", "must lie in (0,1)");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return invalid("alpha", "must lie in (0,1]");
        }
        if !(self.penalty_f > 0.0 && self.penalty_f.is_finite()) {
            return invalid("penalty_f", "must be positive and finite");
        }
        if self.dim < 2 {
            return invalid("dim", "must be at least 2");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return invalid("epsilon", "must be a small positive number");
        }
        if self.cap_dynamic == 0 {
            return invalid("cap_dynamic", "must be at least 1");
        }
        if self.cap_static == 0 {
            return invalid("cap_static", "must be at least 1");
        }
        if let Some(f) = self.relevance_floor {
            if !(0.0..=1.0).contains(&f) {
                return invalid("relevance_floor", "must lie in [0,1]");
            }
        }
        if self.query_budget == 0 {
            return invalid("query_budget", "must be at least 1");
        }
        if self.extractor == ExtractorChoice::Remote && self.remote_endpoint.is_none() {
            return invalid("remote_endpoint", "required when extractor is remote");
        }
        Ok(())
    }

    pub fn fusion_params(&self) -> FusionParams {
        FusionParams {
            alpha: self.alpha,
            penalty: self.penalty_f,
        }
    }

    pub fn activation_config(&self) -> ActivationConfig {
        ActivationConfig {
            epsilon: self.epsilon,
            cap_dynamic: self.cap_dynamic,
            cap_static: self.cap_static,
            relevance_floor: self.relevance_floor,
            ..ActivationConfig::default()
        }
    }

    /// Disease lexicon named by the config, or empty.
    pub fn load_disease_lexicon(&self) -> Result<BTreeSet<String>, ConfigError> {
        match &self.disease_lexicon {
            Some(path) => load_json_file(path),
            None => Ok(BTreeSet::new()),
        }
    }

    pub fn load_synonym_table(&self) -> Result<SynonymTable, ConfigError> {
        match &self.synonym_table {
            Some(path) => load_json_file(path),
            None => Ok(SynonymTable::default()),
        }
    }
}

fn load_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))
}
