//! Run configuration, read from TOML. Relative paths resolve against the
//! directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::ExecOptions;
use crate::extract::provider::ENV_API_KEY;
use crate::extract::{load_truth, Billing, HttpProvider, MockProvider, Provider, Tokenizer};
use crate::index::{Embedder, HashedEmbedder, HttpEmbedder};
use crate::workload::{AttrKind, WorkloadSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderConfig {
    Hashed {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Http { url: String, model: String, dim: usize },
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Hashed { dim: default_dim() }
    }
}

impl EmbedderConfig {
    pub fn dim(&self) -> usize {
        match self {
            EmbedderConfig::Hashed { dim } | EmbedderConfig::Http { dim, .. } => *dim,
        }
    }

    pub fn build(&self) -> Box<dyn Embedder> {
        match self {
            EmbedderConfig::Hashed { dim } => Box::new(HashedEmbedder::new(*dim)),
            EmbedderConfig::Http { url, model, dim } => {
                Box::new(HttpEmbedder::new(url, model, std::env::var(ENV_API_KEY).ok(), *dim))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    /// Answers from a ground-truth sidecar; never touches the network.
    Mock { truth: PathBuf },
    /// Chat-completion endpoint; the key comes from the environment.
    Http { url: String, model: String },
}

impl ProviderConfig {
    pub fn build(&self, tokenizer: Arc<dyn Tokenizer>) -> Result<Arc<dyn Provider>, ConfigError> {
        Ok(match self {
            ProviderConfig::Mock { truth } => {
                let records = load_truth(truth).map_err(|e| ConfigError::Parse {
                    path: truth.clone(),
                    message: e.to_string(),
                })?;
                Arc::new(MockProvider::new(records, Billing::Segments, tokenizer))
            }
            ProviderConfig::Http { url, model } => Arc::new(HttpProvider::new(
                url,
                model,
                std::env::var(ENV_API_KEY).ok(),
                tokenizer,
            )),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Players,
    PlayersTeams,
    League,
}

/// Synthetic workload parameters used by `gen` and `bench`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    #[serde(default)]
    pub preset: Preset,
    /// Documents in the first table.
    pub docs: Option<usize>,
    /// Documents in the referenced table (two-table preset).
    pub teams: Option<usize>,
    /// Fraction of referenced documents reachable through the join filter.
    pub in_selectivity: Option<f64>,
    /// Planted selectivity overrides keyed by attribute name.
    #[serde(default)]
    pub selectivity: BTreeMap<String, f64>,
    pub queries_per_group: Option<usize>,
    pub doc_tokens: Option<usize>,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Players,
            docs: None,
            teams: None,
            in_selectivity: None,
            selectivity: BTreeMap::new(),
            queries_per_group: None,
            doc_tokens: None,
        }
    }
}

impl WorkloadConfig {
    /// Resolves the preset and overrides into a validated generator spec.
    pub fn spec(&self, seed: u64) -> Result<WorkloadSpec, ConfigError> {
        let mut spec = match self.preset {
            Preset::Players => WorkloadSpec::players(self.docs.unwrap_or(200), seed),
            Preset::PlayersTeams => WorkloadSpec::players_teams(
                self.docs.unwrap_or(200),
                self.teams.unwrap_or(40),
                self.in_selectivity.unwrap_or(0.2),
                seed,
            ),
            Preset::League => {
                let mut s = WorkloadSpec::league(seed);
                if let Some(n) = self.docs {
                    s.tables[0].docs = n;
                }
                s
            }
        };
        for (name, &p) in &self.selectivity {
            let attr = spec
                .tables
                .iter_mut()
                .flat_map(|t| t.attrs.iter_mut())
                .find(|a| &a.name == name && matches!(a.kind, AttrKind::Number | AttrKind::Category))
                .ok_or_else(|| ConfigError::Invalid(format!("no filterable attribute `{name}` in the workload")))?;
            attr.selectivity = p;
        }
        if let Some(n) = self.queries_per_group {
            spec.queries_per_group = n;
        }
        if self.doc_tokens.is_some() {
            spec.doc_tokens = self.doc_tokens;
        }
        spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Line-delimited `{"id", "text"}` records or a directory of text files.
    pub corpus: PathBuf,
    /// Table definitions (`{"tables": [...]}`).
    pub schema: PathBuf,
    /// Where `index` writes and `query` reads persisted artifacts.
    #[serde(default = "default_artifacts")]
    pub artifacts: PathBuf,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    pub provider: ProviderConfig,
    #[serde(default = "default_rate")]
    pub sample_rate: f64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_tau")]
    pub initial_tau: f64,
    #[serde(default)]
    pub seed: u64,
    /// Token ceiling per query session.
    pub budget: Option<usize>,
    #[serde(default)]
    pub workload: WorkloadConfig,
}

fn default_dim() -> usize {
    HashedEmbedder::DEFAULT_DIM
}

fn default_artifacts() -> PathBuf {
    PathBuf::from("artifacts")
}

fn default_rate() -> f64 {
    crate::stats::DEFAULT_SAMPLE_RATE
}

fn default_k() -> usize {
    crate::index::retrieval::DEFAULT_K
}

fn default_tau() -> f64 {
    crate::index::INITIAL_TAU
}

impl Config {
    /// A configuration over a generated workload directory, mock provider.
    pub fn for_directory(dir: &Path) -> Config {
        Config {
            corpus: dir.join("corpus.jsonl"),
            schema: dir.join("schema.json"),
            artifacts: dir.join("artifacts"),
            embedder: EmbedderConfig::default(),
            provider: ProviderConfig::Mock {
                truth: dir.join("truth.jsonl"),
            },
            sample_rate: default_rate(),
            k: default_k(),
            initial_tau: default_tau(),
            seed: 0,
            budget: None,
            workload: WorkloadConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Config::parse(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Parses and validates without touching the filesystem.
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<config>"),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "sample_rate must be in (0, 1], got {}",
                self.sample_rate
            )));
        }
        if self.k < 1 {
            return Err(ConfigError::Invalid("k must be at least 1".into()));
        }
        if self.embedder.dim() < 8 {
            return Err(ConfigError::Invalid(format!(
                "embedding dimension must be at least 8, got {}",
                self.embedder.dim()
            )));
        }
        if !(self.initial_tau > 0.0 && self.initial_tau.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "initial_tau must be positive, got {}",
                self.initial_tau
            )));
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.schema);
        fix(&mut self.artifacts);
        if let ProviderConfig::Mock { truth } = &mut self.provider {
            fix(truth);
        }
    }

    pub fn exec_options(&self) -> ExecOptions {
        ExecOptions {
            seed: self.seed,
            order_seed: self.seed,
            sample_rate: self.sample_rate,
            k: self.k,
            initial_tau: self.initial_tau,
            budget: self.budget,
            ..Default::default()
        }
    }
}
