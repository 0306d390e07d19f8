//! Model access bound to pipeline roles.
//!
//! A [`ModelRegistry`] owns one backend per [`ModelSpec`]. A
//! [`CoalitionConfig`] maps every [`ModelRole`] to a model id; a single-model
//! run is just a config whose assignments all name the same id.

mod embed;
mod remote;
mod scripted;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{EmbeddingTable, HashedTokenEmbedder};
pub use remote::{RemoteChatBackend, RemoteEmbeddingBackend};
pub use scripted::{FixtureEntry, ScriptedBackend};

use crate::text::{char_len, sha256_hex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Planner,
    SlotFiller,
    JsonRag,
    ResponseFormer,
    Critic,
    Embedder,
}

impl ModelRole {
    pub const ALL: [ModelRole; 6] = [
        ModelRole::Planner,
        ModelRole::SlotFiller,
        ModelRole::JsonRag,
        ModelRole::ResponseFormer,
        ModelRole::Critic,
        ModelRole::Embedder,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelRole::Planner => "planner",
            ModelRole::SlotFiller => "slot_filler",
            ModelRole::JsonRag => "json_rag",
            ModelRole::ResponseFormer => "response_former",
            ModelRole::Critic => "critic",
            ModelRole::Embedder => "embedder",
        }
    }
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelRole {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| GatewayError::InvalidSpec(format!("unknown role '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_seed")]
    pub seed: Option<u64>,
}

fn default_max_new_tokens() -> u32 {
    512
}

fn default_seed() -> Option<u64> {
    Some(0)
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            max_new_tokens: default_max_new_tokens(),
            temperature: 0.0,
            seed: default_seed(),
        }
    }
}

/// Where a model's output comes from. Paths are resolved against the
/// directory of the file that declared them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackendSpec {
    RemoteChat {
        endpoint: String,
        /// Environment variable holding a bearer token.
        #[serde(default)]
        auth_env: Option<String>,
        /// Provider-side model name; defaults to the model id.
        #[serde(default)]
        model: Option<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
    Scripted {
        fixture: PathBuf,
    },
    TemplateEcho,
    EmbeddingTable {
        table: PathBuf,
    },
    RemoteEmbedding {
        endpoint: String,
        #[serde(default)]
        auth_env: Option<String>,
        #[serde(default)]
        model: Option<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
    HashedTokens {
        dim: usize,
    },
}

fn default_timeout_secs() -> u64 {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: String,
    pub backend: BackendSpec,
    #[serde(default)]
    pub parameter_count_billions: Option<f64>,
    #[serde(default)]
    pub decoding: Decoding,
}

impl ModelSpec {
    pub fn new(id: impl Into<String>, backend: BackendSpec) -> Self {
        Self {
            id: id.into(),
            backend,
            parameter_count_billions: None,
            decoding: Decoding::default(),
        }
    }

    pub fn with_parameter_count(mut self, billions: f64) -> Self {
        self.parameter_count_billions = Some(billions);
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.id.trim().is_empty() {
            return Err(GatewayError::InvalidSpec("model id is empty".into()));
        }
        if let Some(p) = self.parameter_count_billions {
            if !(p.is_finite() && p > 0.0) {
                return Err(GatewayError::InvalidSpec(format!(
                    "model '{}': parameter_count_billions must be > 0",
                    self.id
                )));
            }
        }
        if !(self.decoding.temperature.is_finite() && self.decoding.temperature >= 0.0) {
            return Err(GatewayError::InvalidSpec(format!(
                "model '{}': temperature must be >= 0",
                self.id
            )));
        }
        if let BackendSpec::HashedTokens { dim } = self.backend {
            if dim == 0 {
                return Err(GatewayError::InvalidSpec(format!(
                    "model '{}': embedding dim must be > 0",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Minimum cosine similarity for a semantic parameter to pass.
    #[serde(default = "default_sts_pass")]
    pub sts_pass: f64,
}

fn default_sts_pass() -> f64 {
    0.8
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            sts_pass: default_sts_pass(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budgets {
    /// Character budget for a reduced tool result.
    #[serde(default = "default_rag_budget")]
    pub rag_char_budget: usize,
}

fn default_rag_budget() -> usize {
    1024
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            rag_char_budget: default_rag_budget(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CoalitionConfig {
    pub assignments: BTreeMap<ModelRole, String>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub budgets: Budgets,
}

impl CoalitionConfig {
    /// Every role bound to `model_id`.
    pub fn single_model(model_id: &str) -> Self {
        Self {
            assignments: ModelRole::ALL.into_iter().map(|r| (r, model_id.to_string())).collect(),
            ..Self::default()
        }
    }

    pub fn assign(mut self, role: ModelRole, model_id: &str) -> Self {
        self.assignments.insert(role, model_id.to_string());
        self
    }

    pub fn model_for(&self, role: ModelRole) -> Result<&str, GatewayError> {
        self.assignments
            .get(&role)
            .map(String::as_str)
            .ok_or(GatewayError::UnassignedRole(role))
    }

    /// Checks that every role is assigned and the thresholds are in range.
    pub fn validate_complete(&self) -> Result<(), GatewayError> {
        for role in ModelRole::ALL {
            self.model_for(role)?;
        }
        let t = self.thresholds.sts_pass;
        if !(0.0..=1.0).contains(&t) {
            return Err(GatewayError::InvalidSpec(format!(
                "sts_pass threshold {t} outside [0, 1]"
            )));
        }
        if self.budgets.rag_char_budget < crate::rag::MIN_BUDGET {
            return Err(GatewayError::InvalidSpec(format!(
                "rag_char_budget must be at least {}",
                crate::rag::MIN_BUDGET
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_chars: usize,
    pub output_chars: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub model_id: String,
    pub usage: Usage,
}

/// One prompt/completion pair, as recorded in execution traces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub role: ModelRole,
    pub model_id: String,
    pub prompt_sha256: String,
    pub completion: String,
}

impl Exchange {
    pub fn new(role: ModelRole, prompt: &str, completion: &Completion) -> Self {
        Self {
            role,
            model_id: completion.model_id.clone(),
            prompt_sha256: sha256_hex(prompt),
            completion: completion.text.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no model assigned to role {0}")]
    UnassignedRole(ModelRole),
    #[error("model '{0}' is not registered")]
    UnknownModel(String),
    #[error("model '{0}' is registered twice")]
    DuplicateModel(String),
    #[error("role {0} cannot be used for text generation")]
    NotAChatRole(ModelRole),
    #[error("model '{model}' does not support {capability}")]
    UnsupportedBackend { model: String, capability: &'static str },
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
    #[error("scripted fixture has no entry for role {0}")]
    FixtureExhausted(ModelRole),
    #[error("no embedding available for text {0:?}")]
    MissingEmbedding(String),
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("environment variable {0} is not set")]
    MissingSecret(String),
    #[error("fixture file {path}: {detail}")]
    Fixture { path: PathBuf, detail: String },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
}

/// A text-generation backend.
pub trait ChatBackend: Send + Sync {
    fn generate(&self, role: ModelRole, prompt: &str, decoding: &Decoding) -> Result<String, GatewayError>;
}

/// A sentence-embedding backend. Output dimension is fixed per instance.
pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError>;
}

/// Returns the prompt unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoBackend;

impl ChatBackend for EchoBackend {
    fn generate(&self, _: ModelRole, prompt: &str, _: &Decoding) -> Result<String, GatewayError> {
        Ok(prompt.to_string())
    }
}

#[derive(Clone)]
pub enum BoundBackend {
    Chat(Arc<dyn ChatBackend>),
    Embedding(Arc<dyn EmbeddingBackend>),
}

impl fmt::Debug for BoundBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundBackend::Chat(_) => f.write_str("Chat(..)"),
            BoundBackend::Embedding(_) => f.write_str("Embedding(..)"),
        }
    }
}

#[derive(Debug, Clone)]
struct RegisteredModel {
    spec: ModelSpec,
    backend: BoundBackend,
}

/// Read-only after construction; share it behind an `Arc`.
#[derive(Debug, Clone, Default)]
pub struct ModelRegistry {
    models: BTreeMap<String, RegisteredModel>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a backend for each spec. Relative fixture paths are resolved
    /// against `base_dir`.
    pub fn from_specs(specs: &[ModelSpec], base_dir: &Path) -> Result<Self, GatewayError> {
        let mut registry = Self::new();
        for spec in specs {
            let backend = build_backend(spec, base_dir)?;
            registry.register(spec.clone(), backend)?;
        }
        Ok(registry)
    }

    pub fn register(&mut self, spec: ModelSpec, backend: BoundBackend) -> Result<(), GatewayError> {
        spec.validate()?;
        if self.models.contains_key(&spec.id) {
            return Err(GatewayError::DuplicateModel(spec.id));
        }
        self.models.insert(spec.id.clone(), RegisteredModel { spec, backend });
        Ok(())
    }

    pub fn spec(&self, id: &str) -> Option<&ModelSpec> {
        self.models.get(id).map(|m| &m.spec)
    }

    pub fn specs(&self) -> impl Iterator<Item = &ModelSpec> {
        self.models.values().map(|m| &m.spec)
    }

    /// Checks that every id referenced by `config` is registered.
    pub fn check_config(&self, config: &CoalitionConfig) -> Result<(), GatewayError> {
        for id in config.assignments.values() {
            if !self.models.contains_key(id) {
                return Err(GatewayError::UnknownModel(id.clone()));
            }
        }
        Ok(())
    }

    fn resolve(&self, role: ModelRole, config: &CoalitionConfig) -> Result<&RegisteredModel, GatewayError> {
        let id = config.model_for(role)?;
        self.models
            .get(id)
            .ok_or_else(|| GatewayError::UnknownModel(id.to_string()))
    }

    pub fn complete(
        &self,
        role: ModelRole,
        prompt: &str,
        config: &CoalitionConfig,
    ) -> Result<Completion, GatewayError> {
        if role == ModelRole::Embedder {
            return Err(GatewayError::NotAChatRole(role));
        }
        let model = self.resolve(role, config)?;
        let BoundBackend::Chat(backend) = &model.backend else {
            return Err(GatewayError::UnsupportedBackend {
                model: model.spec.id.clone(),
                capability: "text generation",
            });
        };
        let text = backend.generate(role, prompt, &model.spec.decoding)?;
        Ok(Completion {
            usage: Usage {
                prompt_chars: char_len(prompt),
                output_chars: char_len(&text),
            },
            text,
            model_id: model.spec.id.clone(),
        })
    }

    pub fn embed(&self, text: &str, config: &CoalitionConfig) -> Result<Vec<f64>, GatewayError> {
        let model = self.resolve(ModelRole::Embedder, config)?;
        if text.is_empty() {
            return Err(GatewayError::EmptyText);
        }
        let BoundBackend::Embedding(backend) = &model.backend else {
            return Err(GatewayError::UnsupportedBackend {
                model: model.spec.id.clone(),
                capability: "embeddings",
            });
        };
        backend.embed(text)
    }
}

fn build_backend(spec: &ModelSpec, base_dir: &Path) -> Result<BoundBackend, GatewayError> {
    let resolve = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    };
    Ok(match &spec.backend {
        BackendSpec::RemoteChat {
            endpoint,
            auth_env,
            model,
            timeout_secs,
        } => BoundBackend::Chat(Arc::new(RemoteChatBackend::new(
            endpoint,
            model.clone().unwrap_or_else(|| spec.id.clone()),
            auth_env.clone(),
            *timeout_secs,
        ))),
        BackendSpec::Scripted { fixture } => BoundBackend::Chat(Arc::new(ScriptedBackend::load(&resolve(fixture))?)),
        BackendSpec::TemplateEcho => BoundBackend::Chat(Arc::new(EchoBackend)),
        BackendSpec::EmbeddingTable { table } => {
            BoundBackend::Embedding(Arc::new(EmbeddingTable::load(&resolve(table))?))
        }
        BackendSpec::RemoteEmbedding {
            endpoint,
            auth_env,
            model,
            timeout_secs,
        } => BoundBackend::Embedding(Arc::new(RemoteEmbeddingBackend::new(
            endpoint,
            model.clone().unwrap_or_else(|| spec.id.clone()),
            auth_env.clone(),
            *timeout_secs,
        ))),
        BackendSpec::HashedTokens { dim } => BoundBackend::Embedding(Arc::new(HashedTokenEmbedder::new(*dim))),
    })
}

/// A registry paired with the coalition it serves.
#[derive(Debug, Clone)]
pub struct Gateway {
    registry: Arc<ModelRegistry>,
    config: CoalitionConfig,
}

impl Gateway {
    pub fn new(registry: Arc<ModelRegistry>, config: CoalitionConfig) -> Result<Self, GatewayError> {
        registry.check_config(&config)?;
        Ok(Self { registry, config })
    }

    pub fn config(&self) -> &CoalitionConfig {
        &self.config
    }

    pub fn registry(&self) -> &ModelRegistry {
        &self.registry
    }

    pub fn complete(&self, role: ModelRole, prompt: &str) -> Result<Completion, GatewayError> {
        self.registry.complete(role, prompt, &self.config)
    }

    /// Completes and records the exchange.
    pub fn exchange(&self, role: ModelRole, prompt: &str) -> Result<(Completion, Exchange), GatewayError> {
        let completion = self.complete(role, prompt)?;
        let exchange = Exchange::new(role, prompt, &completion);
        Ok((completion, exchange))
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        self.registry.embed(text, &self.config)
    }

    pub fn has_role(&self, role: ModelRole) -> bool {
        self.config.assignments.contains_key(&role)
    }
}
