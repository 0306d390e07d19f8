//! Run configuration file.
//!
//! ```json
//! { "models": [{ "id": "planner", "backend": { "type": "scripted", "fixture": "model_fixtures.json" } }, ...],
//!   "coalition": { "assignments": { "planner": "planner", ... },
//!                  "thresholds": { "sts_pass": 0.8 }, "budgets": { "rag_char_budget": 1024 } },
//!   "catalog": "catalog.json",
//!   "tools": { "mode": "simulated", "fixtures": ["tool_fixtures.json"] },
//!   "templates_dir": null,
//!   "output_dir": "out",
//!   "preview_len": 48 }
//! ```
//!
//! Relative paths are resolved against the directory holding the file.
//! `tools` may instead be `{ "mode": "live", "timeout_secs": 30, "max_in_flight": 4 }`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{CatalogError, ToolCatalog};
use crate::gateway::{BackendSpec, CoalitionConfig, Gateway, GatewayError, ModelRegistry, ModelSpec};
use crate::pipeline::Engine;
use crate::rag::DEFAULT_PREVIEW_LEN;
use crate::runtime::{FixtureSet, InvocationMode, LiveClient, ToolError, DEFAULT_MAX_IN_FLIGHT, DEFAULT_TIMEOUT_SECS};
use crate::templates::{TemplateError, Templates};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ToolsConfig {
    Simulated {
        fixtures: Vec<PathBuf>,
    },
    Live {
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}

fn default_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_preview_len() -> usize {
    DEFAULT_PREVIEW_LEN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfigFile {
    pub models: Vec<ModelSpec>,
    pub coalition: CoalitionConfig,
    pub catalog: PathBuf,
    pub tools: ToolsConfig,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_preview_len")]
    pub preview_len: usize,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {detail}")]
    Io { path: PathBuf, detail: String },
    #[error("invalid config {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("{what} {path} does not exist")]
    MissingPath { what: &'static str, path: PathBuf },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Tool(#[from] ToolError),
}

/// A validated configuration with its resources loaded.
#[derive(Debug)]
pub struct LoadedConfig {
    pub file: RunConfigFile,
    pub base_dir: PathBuf,
    pub catalog: Arc<ToolCatalog>,
    pub registry: Arc<ModelRegistry>,
    pub templates: Templates,
    pub output_dir: PathBuf,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn require(what: &'static str, path: PathBuf) -> Result<PathBuf, ConfigError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(ConfigError::MissingPath { what, path })
    }
}

impl RunConfigFile {
    pub fn parse(raw: &str, path: &Path) -> Result<Self, ConfigError> {
        serde_json::from_str(raw).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
    }
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let file = RunConfigFile::parse(&raw, path)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_file(file, base_dir)
    }

    /// Validates everything that can be checked before any model call:
    /// referenced paths exist, the catalog and fixtures parse, every role is
    /// bound to a registered model.
    pub fn from_file(file: RunConfigFile, base_dir: PathBuf) -> Result<Self, ConfigError> {
        if file.preview_len == 0 {
            return Err(ConfigError::Invalid("preview_len must be positive".into()));
        }
        file.coalition.validate_complete()?;
        for spec in &file.models {
            match &spec.backend {
                BackendSpec::Scripted { fixture } => {
                    require("model fixture", resolve(&base_dir, fixture))?;
                }
                BackendSpec::EmbeddingTable { table } => {
                    require("embedding table", resolve(&base_dir, table))?;
                }
                _ => {}
            }
        }
        let catalog = ToolCatalog::load(&require("catalog", resolve(&base_dir, &file.catalog))?)?;
        let templates = match &file.templates_dir {
            Some(dir) => Templates::load_dir(&require("templates directory", resolve(&base_dir, dir))?)?,
            None => Templates::builtin(),
        };
        if let ToolsConfig::Simulated { fixtures } = &file.tools {
            if fixtures.is_empty() {
                return Err(ConfigError::Invalid(
                    "simulated mode needs at least one fixture file".into(),
                ));
            }
            for f in fixtures {
                require("tool fixture", resolve(&base_dir, f))?;
            }
        }
        if let ToolsConfig::Live { max_in_flight: 0, .. } = file.tools {
            return Err(ConfigError::Invalid("max_in_flight must be positive".into()));
        }
        let registry = ModelRegistry::from_specs(&file.models, &base_dir)?;
        registry.check_config(&file.coalition)?;
        let output_dir = resolve(&base_dir, &file.output_dir);
        Ok(Self {
            file,
            base_dir,
            catalog: Arc::new(catalog),
            registry: Arc::new(registry),
            templates,
            output_dir,
        })
    }

    pub fn invocation_mode(&self) -> Result<InvocationMode, ConfigError> {
        Ok(match &self.file.tools {
            ToolsConfig::Simulated { fixtures } => {
                let paths: Vec<PathBuf> = fixtures.iter().map(|f| resolve(&self.base_dir, f)).collect();
                InvocationMode::Simulated(FixtureSet::load_all(&paths)?)
            }
            ToolsConfig::Live {
                timeout_secs,
                max_in_flight,
            } => InvocationMode::Live(LiveClient::new(Duration::from_secs(*timeout_secs), *max_in_flight)),
        })
    }

    /// Upper bound on useful bench parallelism: the live in-flight limit, or
    /// unbounded in simulated mode.
    pub fn max_jobs(&self) -> Option<usize> {
        match self.file.tools {
            ToolsConfig::Live { max_in_flight, .. } => Some(max_in_flight),
            ToolsConfig::Simulated { .. } => None,
        }
    }

    pub fn engine(&self) -> Result<Engine, ConfigError> {
        Ok(Engine {
            catalog: Arc::clone(&self.catalog),
            gateway: Gateway::new(Arc::clone(&self.registry), self.file.coalition.clone())?,
            templates: self.templates.clone(),
            tools: self.invocation_mode()?,
            preview_len: self.file.preview_len,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    fn setup() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "catalog.json",
            r#"{"services":[{"name":"s","base_url":"http://x"}],"tools":[{"name":"t","service":"s","method":"GET","path":"/t"}]}"#,
        );
        write(dir.path(), "tools.json", r#"[{"method":"GET","path":"/t","body":{}}]"#);
        write(dir.path(), "models.json", "[]");
        dir
    }

    fn config(assign_all: bool) -> String {
        let roles = if assign_all {
            r#""planner":"m","slot_filler":"m","json_rag":"m","response_former":"m","critic":"m","embedder":"e""#
        } else {
            r#""planner":"m""#
        };
        format!(
            r#"{{"models":[{{"id":"m","backend":{{"type":"scripted","fixture":"models.json"}}}},{{"id":"e","backend":{{"type":"hashed_tokens","dim":8}}}}],
                "coalition":{{"assignments":{{{roles}}}}},
                "catalog":"catalog.json","tools":{{"mode":"simulated","fixtures":["tools.json"]}}}}"#
        )
    }

    #[test]
    fn loads_relative_to_file() {
        let dir = setup();
        write(dir.path(), "config.json", &config(true));
        let loaded = LoadedConfig::load(&dir.path().join("config.json")).unwrap();
        assert_eq!(loaded.catalog.tools().len(), 1);
        assert_eq!(loaded.output_dir, dir.path().join("out"));
        assert!(loaded.engine().is_ok());
    }

    #[test]
    fn rejects_incomplete_or_missing() {
        let dir = setup();
        write(dir.path(), "config.json", &config(false));
        assert!(matches!(
            LoadedConfig::load(&dir.path().join("config.json")),
            Err(ConfigError::Gateway(GatewayError::UnassignedRole(_)))
        ));
        write(
            dir.path(),
            "config.json",
            &config(true).replace("catalog.json", "nope.json"),
        );
        assert!(matches!(
            LoadedConfig::load(&dir.path().join("config.json")),
            Err(ConfigError::MissingPath { what: "catalog", .. })
        ));
        assert!(matches!(
            LoadedConfig::load(&dir.path().join("absent.json")),
            Err(ConfigError::Io { .. })
        ));
    }
}
