//! Golden benchmark cases.
//!
//! Dataset file: a JSON array of
//!
//! ```json
//! { "id": "currency-1",
//!   "query": "Convert 100 USD to GBP",
//!   "golden_plan": [{ "tool": "convertCurrency", "intent": "convert the amount" }],
//!   "golden_params": { "1": { "from": { "value": "USD", "match": "exact" } } },
//!   "expected_response": "100 USD is about 79 GBP.",
//!   "services": ["currency"] }
//! ```
//!
//! `expected_response` may also be an array of snippets. `golden_params`
//! keys are 1-based golden step indices; `match` is `exact` or `semantic`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::catalog::ToolCatalog;
use crate::planner::Plan;

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Exact,
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenParam {
    pub value: Value,
    #[serde(rename = "match", default = "exact")]
    pub mode: MatchMode,
}

fn exact() -> MatchMode {
    MatchMode::Exact
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExpectedResponse {
    Text(String),
    Snippets(Vec<String>),
}

impl ExpectedResponse {
    pub fn snippets(&self) -> Vec<&str> {
        match self {
            ExpectedResponse::Text(t) => vec![t.as_str()],
            ExpectedResponse::Snippets(s) => s.iter().map(String::as_str).collect(),
        }
    }

    /// The reference text scored against: snippets joined by a space.
    pub fn joined(&self) -> String {
        self.snippets().join(" ")
    }
}

pub type StepParams = BTreeMap<String, GoldenParam>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenCase {
    pub id: String,
    pub query: String,
    pub golden_plan: Plan,
    #[serde(default)]
    pub golden_params: BTreeMap<usize, StepParams>,
    pub expected_response: ExpectedResponse,
    #[serde(default)]
    pub services: Vec<String>,
}

impl GoldenCase {
    /// Structural checks. With a catalog, also checks that every golden
    /// parameter exists on its tool and that semantic matching is only used
    /// on semantic-query parameters.
    pub fn validate(&self, catalog: Option<&ToolCatalog>) -> Result<(), EvalError> {
        let invalid = |detail: String| EvalError::InvalidCase {
            id: self.id.clone(),
            detail,
        };
        if self.id.trim().is_empty() {
            return Err(invalid("empty id".into()));
        }
        if self.query.trim().is_empty() {
            return Err(invalid("empty query".into()));
        }
        if self.golden_plan.is_empty() {
            return Err(invalid("empty golden plan".into()));
        }
        if self.expected_response.snippets().iter().all(|s| s.trim().is_empty()) {
            return Err(invalid("empty expected response".into()));
        }
        for (&step, params) in &self.golden_params {
            let Some(plan_step) = step.checked_sub(1).and_then(|i| self.golden_plan.steps().get(i)) else {
                return Err(invalid(format!("golden params reference step {step} outside the plan")));
            };
            let Some(catalog) = catalog else { continue };
            let tool = catalog
                .lookup(&plan_step.tool_name)
                .ok_or_else(|| invalid(format!("tool '{}' is not in the catalog", plan_step.tool_name)))?;
            for (name, golden) in params {
                let spec = tool
                    .parameter(name)
                    .ok_or_else(|| invalid(format!("tool '{}' has no parameter '{name}'", tool.name)))?;
                if golden.mode == MatchMode::Semantic && !spec.semantic_query {
                    return Err(invalid(format!("parameter '{name}' is not a semantic query")));
                }
            }
        }
        Ok(())
    }
}

/// Parses and validates a dataset; ids must be unique and the list non-empty.
pub fn parse_dataset(raw: &str, catalog: Option<&ToolCatalog>) -> Result<Vec<GoldenCase>, EvalError> {
    let cases: Vec<GoldenCase> = serde_json::from_str(raw).map_err(|e| EvalError::Parse(e.to_string()))?;
    if cases.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut ids = BTreeSet::new();
    for case in &cases {
        case.validate(catalog)?;
        if !ids.insert(case.id.as_str()) {
            return Err(EvalError::InvalidCase {
                id: case.id.clone(),
                detail: "duplicate id".into(),
            });
        }
    }
    Ok(cases)
}

pub fn load_dataset(path: &Path, catalog: Option<&ToolCatalog>) -> Result<Vec<GoldenCase>, EvalError> {
    let raw = fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    parse_dataset(&raw, catalog)
}
