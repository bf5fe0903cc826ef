//! TOML configuration shared by the CLI, the HTTP service and examples.
//!
//! ```toml
//! backend = "mock"            # or "remote"
//! store_path = "data"         # omit for an in-memory store
//! review_required = true      # profiles must be approved before apply
//!
//! [remote]
//! base_url = "http://localhost:8000/v1"
//! model = "some-chat-model"
//! embedding_model = "some-embedding-model"
//! embedding_dim = 1024
//! api_key_env = "TREEMEM_API_KEY"
//! timeout_secs = 60
//!
//! [retrieval]
//! k_facet = 5
//! k_qa = 5
//! k_summary = 5
//! k_inner = 3
//! query_parser = "backend"    # or "rules"
//!
//! [memory]
//! max_facets = 64
//! max_qa = 32
//! doc_token_budget = 8000
//!
//! [aggregation]
//! prune_min_children = 2      # optional
//!
//! [answer]
//! context_token_cap = 4000
//!
//! [adaptation]
//! min_support = 3
//! window_days = 30
//! max_queries = 10000
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationConfig;
use crate::answer::AnswerConfig;
use crate::backend::{Backend, HashEmbedder, MockGenerator, RemoteEmbedder, RemoteGenerator};
use crate::error::{Error, Result};
use crate::memory::MemoryConfig;
use crate::retrieval::{QueryParser, RetrievalParams};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    pub embedding_model: String,
    pub embedding_dim: usize,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "gpt-4o-mini".into(),
            embedding_model: "text-embedding-3-small".into(),
            embedding_dim: 1536,
            api_key_env: "TREEMEM_API_KEY".into(),
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    #[serde(flatten)]
    pub params: RetrievalParams,
    pub query_parser: QueryParser,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptationConfig {
    pub min_support: usize,
    pub window_days: i64,
    pub max_queries: usize,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self { min_support: 3, window_days: 30, max_queries: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub backend: BackendKind,
    pub store_path: Option<PathBuf>,
    pub review_required: bool,
    pub remote: RemoteConfig,
    pub retrieval: RetrievalConfig,
    pub memory: MemoryConfig,
    pub aggregation: AggregationConfig,
    pub answer: AnswerConfig,
    pub adaptation: AdaptationConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            store_path: None,
            review_required: true,
            remote: RemoteConfig::default(),
            retrieval: RetrievalConfig::default(),
            memory: MemoryConfig::default(),
            aggregation: AggregationConfig::default(),
            answer: AnswerConfig::default(),
            adaptation: AdaptationConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file. A relative `store_path` is resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut c = Self::from_toml(&text)?;
        if let Some(p) = &c.store_path {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                c.store_path = Some(base.join(p));
            }
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.retrieval.params;
        if p.k_inner == 0 {
            return Err(Error::Config("retrieval.k_inner must be at least 1".into()));
        }
        if self.adaptation.min_support < 2 {
            return Err(Error::Config("adaptation.min_support must be at least 2".into()));
        }
        if self.aggregation.prune_min_children == Some(0) {
            return Err(Error::Config("aggregation.prune_min_children must be at least 1".into()));
        }
        Ok(())
    }

    pub fn build_backend(&self) -> Result<Backend> {
        match self.backend {
            BackendKind::Mock => Ok(Backend::new(Arc::new(MockGenerator), Arc::new(HashEmbedder::default()))),
            BackendKind::Remote => {
                let r = &self.remote;
                let key = std::env::var(&r.api_key_env).ok().filter(|k| !k.is_empty());
                let timeout = Duration::from_secs(r.timeout_secs.max(1));
                let generator = RemoteGenerator::new(&r.base_url, &r.model, key.clone(), timeout)?;
                let embedder = RemoteEmbedder::new(&r.base_url, &r.embedding_model, key, r.embedding_dim, timeout)?;
                Ok(Backend::new(Arc::new(generator), Arc::new(embedder)))
            }
        }
    }
}
