//! Service configuration: a TOML file plus environment overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use learnpath_core::background::GradeScale;
use learnpath_core::strategies::{layer_of, StrategyConfig, CONCEPT_MAP};
use serde::{Deserialize, Serialize};

pub const ENV_BIND: &str = "LEARNPATH_BIND";
pub const ENV_DATA_DIR: &str = "LEARNPATH_DATA_DIR";
pub const ENV_DEFAULT_STRATEGY: &str = "LEARNPATH_DEFAULT_STRATEGY";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
}

/// File names under `data_dir` unless given as absolute paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub data_dir: PathBuf,
    pub default_strategy: String,
    pub bank: PathBuf,
    pub concept_nodes: PathBuf,
    pub concept_arcs: PathBuf,
    pub background: Option<PathBuf>,
    /// Grade fields mapped onto 0..100 before imputation.
    pub grade_scales: BTreeMap<String, GradeScale>,
    pub event_log: PathBuf,
    pub session_log: PathBuf,
    pub model_dir: PathBuf,
    /// Built UI bundle served under `/` when the directory exists.
    pub static_dir: PathBuf,
    /// Idle time after which a session stops accepting answers.
    pub session_ttl_secs: u64,
    /// Base of the per-session strategy seeds.
    pub seed: u64,
    pub strategies: StrategyConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            data_dir: "data".into(),
            default_strategy: CONCEPT_MAP.into(),
            bank: "bank.csv".into(),
            concept_nodes: "concept_nodes.csv".into(),
            concept_arcs: "concept_arcs.csv".into(),
            background: None,
            grade_scales: BTreeMap::new(),
            event_log: "events.jsonl".into(),
            session_log: "sessions.jsonl".into(),
            model_dir: "models".into(),
            static_dir: "ui".into(),
            session_ttl_secs: 2 * 60 * 60,
            seed: 0,
            strategies: StrategyConfig::default(),
        }
    }
}

impl ServiceConfig {
    /// Reads the file, resolves a relative `data_dir` against the file's
    /// directory, then applies environment overrides.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.data_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.data_dir = dir.join(&cfg.data_dir);
            }
        }
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = lookup(ENV_BIND) {
            self.bind = v;
        }
        if let Some(v) = lookup(ENV_DATA_DIR) {
            self.data_dir = v.into();
        }
        if let Some(v) = lookup(ENV_DEFAULT_STRATEGY) {
            self.default_strategy = v;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if layer_of(&self.default_strategy).is_none() {
            return Err(ConfigError::Invalid {
                field: "default_strategy",
                message: format!("unknown strategy `{}`", self.default_strategy),
            });
        }
        if self.session_ttl_secs == 0 {
            return Err(ConfigError::Invalid {
                field: "session_ttl_secs",
                message: "must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_owned()
        } else {
            self.data_dir.join(p)
        }
    }
}
