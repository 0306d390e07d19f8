//! The catalogue of services and tools the agent may plan over.
//!
//! File format (JSON):
//!
//! ```json
//! { "services": [{ "name": "currency", "description": "...", "base_url": "https://..." }],
//!   "tools": [{ "name": "convertCurrency", "service": "currency", "method": "GET",
//!               "path": "/currency/convert", "description": "...",
//!               "parameters": [{ "name": "from", "location": "query", "type": "string",
//!                                "required": true, "semantic_query": false,
//!                                "description": "..." }] }] }
//! ```
//!
//! `location` is one of `path`, `query`, `body`; `type` one of `string`,
//! `integer`, `number`, `boolean`. Every `{placeholder}` in a tool path must
//! have a matching `path` parameter and vice versa.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{char_len, fold_name};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamLocation {
    Path,
    Query,
    Body,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    String,
    Integer,
    Number,
    Boolean,
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueType::String => "string",
            ValueType::Integer => "integer",
            ValueType::Number => "number",
            ValueType::Boolean => "boolean",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HttpMethod {
    GET,
    POST,
    PUT,
    DELETE,
}

impl HttpMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            HttpMethod::GET => "GET",
            HttpMethod::POST => "POST",
            HttpMethod::PUT => "PUT",
            HttpMethod::DELETE => "DELETE",
        }
    }
}

impl fmt::Display for HttpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub location: ParamLocation,
    #[serde(rename = "type")]
    pub value_type: ValueType,
    #[serde(default)]
    pub required: bool,
    /// Free-text question parameters, scored by semantic similarity.
    #[serde(default)]
    pub semantic_query: bool,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tool {
    pub name: String,
    pub service: String,
    #[serde(rename = "method")]
    pub http_method: HttpMethod,
    #[serde(rename = "path")]
    pub path_template: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub parameters: Vec<ParameterSpec>,
}

impl Tool {
    pub fn parameter(&self, name: &str) -> Option<&ParameterSpec> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Service {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub base_url: String,
    /// Static headers sent with every live request to this service.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub headers: BTreeMap<String, String>,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("failed to read catalog {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("catalog parse error: {0}")]
    ParseError(String),
    #[error("catalog schema violation: {0}")]
    SchemaViolation(String),
    #[error("duplicate tool name '{0}'")]
    DuplicateToolName(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CatalogFile {
    #[serde(default)]
    services: Vec<Service>,
    #[serde(default)]
    tools: Vec<Tool>,
}

/// Validated, immutable catalogue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolCatalog {
    services: Vec<Service>,
    tools: Vec<Tool>,
    by_folded_name: HashMap<String, usize>,
}

fn tool_name_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Za-z0-9_\-]+$").unwrap())
}

fn placeholder_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([^{}]*)\}").unwrap())
}

/// Names of `{placeholder}`s in a path template, in order of appearance.
pub fn path_placeholders(template: &str) -> Vec<String> {
    placeholder_regex()
        .captures_iter(template)
        .map(|c| c[1].to_string())
        .collect()
}

impl ToolCatalog {
    pub fn new(services: Vec<Service>, tools: Vec<Tool>) -> Result<Self, CatalogError> {
        let violation = |msg: String| Err(CatalogError::SchemaViolation(msg));

        let mut service_names = BTreeSet::new();
        for s in &services {
            if s.name.trim().is_empty() {
                return violation("service with empty name".into());
            }
            if !service_names.insert(s.name.as_str()) {
                return violation(format!("service '{}' declared twice", s.name));
            }
        }

        let mut by_folded_name = HashMap::new();
        for (i, tool) in tools.iter().enumerate() {
            if !tool_name_regex().is_match(&tool.name) {
                return violation(format!(
                    "tool name '{}' must be non-empty and use only letters, digits, '_' or '-'",
                    tool.name
                ));
            }
            if by_folded_name.insert(fold_name(&tool.name), i).is_some() {
                return Err(CatalogError::DuplicateToolName(tool.name.clone()));
            }
            if !service_names.contains(tool.service.as_str()) {
                return violation(format!(
                    "tool '{}' references undeclared service '{}'",
                    tool.name, tool.service
                ));
            }
            validate_parameters(tool)?;
        }

        Ok(Self {
            services,
            tools,
            by_folded_name,
        })
    }

    pub fn empty() -> Self {
        Self {
            services: Vec::new(),
            tools: Vec::new(),
            by_folded_name: HashMap::new(),
        }
    }

    pub fn from_json_str(raw: &str) -> Result<Self, CatalogError> {
        let file: CatalogFile = serde_json::from_str(raw).map_err(|e| CatalogError::ParseError(e.to_string()))?;
        Self::new(file.services, file.tools)
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let raw = fs::read_to_string(path).map_err(|source| CatalogError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&raw)
    }

    pub fn to_json_string(&self) -> String {
        let file = CatalogFile {
            services: self.services.clone(),
            tools: self.tools.clone(),
        };
        serde_json::to_string_pretty(&file).expect("catalog serializes")
    }

    pub fn services(&self) -> &[Service] {
        &self.services
    }

    pub fn tools(&self) -> &[Tool] {
        &self.tools
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn service(&self, name: &str) -> Option<&Service> {
        self.services.iter().find(|s| s.name == name)
    }

    /// Exact match after case-fold and trim.
    pub fn lookup(&self, name: &str) -> Option<&Tool> {
        self.by_folded_name.get(&fold_name(name)).map(|&i| &self.tools[i])
    }

    /// Closest tool by Levenshtein distance over case-folded names. Ties go to
    /// the earlier tool. `None` when the catalog is empty or the best distance
    /// exceeds `ceil(len(name) / 3)`.
    pub fn nearest_tool(&self, name: &str) -> Option<(&Tool, usize)> {
        let folded = fold_name(name);
        let threshold = char_len(&folded).div_ceil(3);
        let mut best: Option<(&Tool, usize)> = None;
        for tool in &self.tools {
            let d = levenshtein(&folded, &fold_name(&tool.name));
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((tool, d));
            }
        }
        best.filter(|&(_, d)| d <= threshold)
    }

    /// One line per tool, `name: description (service)`, in catalog order.
    pub fn render_prompt(&self) -> String {
        self.tools
            .iter()
            .map(|t| format!("{}: {} ({})", t.name, t.description, t.service))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn validate_parameters(tool: &Tool) -> Result<(), CatalogError> {
    let violation = |msg: String| Err(CatalogError::SchemaViolation(msg));
    let mut names = BTreeSet::new();
    for p in &tool.parameters {
        if p.name.trim().is_empty() {
            return violation(format!("tool '{}' has a parameter with an empty name", tool.name));
        }
        if !names.insert(p.name.as_str()) {
            return violation(format!("tool '{}' declares parameter '{}' twice", tool.name, p.name));
        }
        if p.semantic_query && p.value_type != ValueType::String {
            return violation(format!(
                "tool '{}': semantic_query parameter '{}' must be a string",
                tool.name, p.name
            ));
        }
    }
    let placeholders: BTreeSet<String> = path_placeholders(&tool.path_template).into_iter().collect();
    let path_params: BTreeSet<String> = tool
        .parameters
        .iter()
        .filter(|p| p.location == ParamLocation::Path)
        .map(|p| p.name.clone())
        .collect();
    if let Some(missing) = placeholders.difference(&path_params).next() {
        return violation(format!(
            "tool '{}': path placeholder {{{missing}}} has no path parameter",
            tool.name
        ));
    }
    if let Some(extra) = path_params.difference(&placeholders).next() {
        return violation(format!(
            "tool '{}': path parameter '{extra}' does not appear in '{}'",
            tool.name, tool.path_template
        ));
    }
    Ok(())
}

/// Edit distance over Unicode scalar values, two-row dynamic programme.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let substitution = prev[j] + usize::from(ca != cb);
            cur[j + 1] = substitution.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Memoised recursive definition, independent of the two-row version.
    fn levenshtein_oracle(a: &[char], b: &[char]) -> usize {
        fn go(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
            if a.is_empty() {
                return b.len();
            }
            if b.is_empty() {
                return a.len();
            }
            if let Some(&v) = memo.get(&(a.len(), b.len())) {
                return v;
            }
            let v = if a[0] == b[0] {
                go(&a[1..], &b[1..], memo)
            } else {
                1 + go(&a[1..], b, memo)
                    .min(go(a, &b[1..], memo))
                    .min(go(&a[1..], &b[1..], memo))
            };
            memo.insert((a.len(), b.len()), v);
            v
        }
        go(a, b, &mut HashMap::new())
    }

    fn dist(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        levenshtein_oracle(&a, &b)
    }

    fn tool(name: &str, service: &str) -> Tool {
        Tool {
            name: name.into(),
            service: service.into(),
            http_method: HttpMethod::GET,
            path_template: format!("/{name}"),
            description: format!("{name} tool"),
            parameters: vec![],
        }
    }

    fn svc(name: &str) -> Service {
        Service {
            name: name.into(),
            description: String::new(),
            base_url: "http://localhost".into(),
            headers: BTreeMap::new(),
        }
    }

    fn weather_news() -> ToolCatalog {
        ToolCatalog::new(
            vec![svc("weather"), svc("news")],
            vec![tool("getWeather", "weather"), tool("getNews", "news")],
        )
        .unwrap()
    }

    #[test]
    fn loads_two_service_file() {
        let raw = r#"{
          "services": [
            {"name": "currency", "description": "FX", "base_url": "http://fx"},
            {"name": "weather", "base_url": "http://wx"}
          ],
          "tools": [
            {"name": "convert", "service": "currency", "method": "GET", "path": "/convert",
             "parameters": [{"name": "from", "location": "query", "type": "string", "required": true}]},
            {"name": "forecast", "service": "weather", "method": "GET", "path": "/forecast/{city}",
             "parameters": [{"name": "city", "location": "path", "type": "string", "required": true}]}
          ]}"#;
        let c = ToolCatalog::from_json_str(raw).unwrap();
        assert_eq!(c.services().len(), 2);
        assert_eq!(c.tools().len(), 2);
        assert!(c.tools()[0].parameters[0].required);
        assert!(!c.tools()[0].parameters[0].semantic_query);
        let again = ToolCatalog::from_json_str(&c.to_json_string()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn placeholder_without_path_param_is_violation() {
        let raw = r#"{"services":[{"name":"s","base_url":"u"}],
          "tools":[{"name":"get","service":"s","method":"GET","path":"/items/{id}","parameters":[]}]}"#;
        assert!(matches!(
            ToolCatalog::from_json_str(raw),
            Err(CatalogError::SchemaViolation(_))
        ));
    }

    #[test]
    fn path_param_without_placeholder_is_violation() {
        let raw = r#"{"services":[{"name":"s","base_url":"u"}],
          "tools":[{"name":"get","service":"s","method":"GET","path":"/items",
          "parameters":[{"name":"id","location":"path","type":"string"}]}]}"#;
        assert!(matches!(
            ToolCatalog::from_json_str(raw),
            Err(CatalogError::SchemaViolation(_))
        ));
    }

    #[test]
    fn duplicate_tool_names_rejected() {
        let err = ToolCatalog::new(vec![svc("s")], vec![tool("convert", "s"), tool("convert", "s")]).unwrap_err();
        assert!(matches!(err, CatalogError::DuplicateToolName(n) if n == "convert"));
        let err = ToolCatalog::new(vec![svc("s")], vec![tool("Convert", "s"), tool("convert", "s")]).unwrap_err();
        assert!(matches!(err, CatalogError::DuplicateToolName(_)));
    }

    #[test]
    fn other_schema_violations() {
        assert!(ToolCatalog::new(vec![svc("s")], vec![tool("t", "missing")]).is_err());
        assert!(ToolCatalog::new(vec![svc("s"), svc("s")], vec![]).is_err());
        assert!(ToolCatalog::new(vec![svc("s")], vec![tool("bad name", "s")]).is_err());
        let mut t = tool("q", "s");
        t.parameters.push(ParameterSpec {
            name: "n".into(),
            location: ParamLocation::Query,
            value_type: ValueType::Integer,
            required: false,
            semantic_query: true,
            description: String::new(),
        });
        assert!(ToolCatalog::new(vec![svc("s")], vec![t]).is_err());
        assert!(matches!(
            ToolCatalog::from_json_str("{"),
            Err(CatalogError::ParseError(_))
        ));
    }

    #[test]
    fn lookup_case_folds_and_trims() {
        let c = weather_news();
        assert_eq!(c.lookup("getWeather").unwrap().name, "getWeather");
        assert_eq!(c.lookup(" GETWEATHER ").unwrap().name, "getWeather");
        assert!(c.lookup("getWeatherr").is_none());
    }

    #[test]
    fn nearest_tool_examples_match_brute_force() {
        let c = weather_news();
        assert_eq!(dist("getweathr", "getweather"), 1);
        assert_eq!(dist("getweathr", "getnews"), 5);
        let (t, d) = c.nearest_tool("getWeathr").unwrap();
        assert_eq!((t.name.as_str(), d), ("getWeather", 1));

        let (t, d) = c.nearest_tool("getNews").unwrap();
        assert_eq!((t.name.as_str(), d), ("getNews", 0));

        // every distance exceeds ceil(6 / 3) = 2
        assert!(dist("zzzzzz", "getweather") > 2 && dist("zzzzzz", "getnews") > 2);
        assert!(c.nearest_tool("zzzzzz").is_none());
    }

    #[test]
    fn nearest_tool_ties_go_to_catalog_order() {
        let c = ToolCatalog::new(vec![svc("s")], vec![tool("abcx", "s"), tool("abcy", "s")]).unwrap();
        assert_eq!(c.nearest_tool("abcz").unwrap().0.name, "abcx");
        assert!(ToolCatalog::empty().nearest_tool("x").is_none());
    }

    #[test]
    fn render_prompt_lines() {
        assert_eq!(ToolCatalog::empty().render_prompt(), "");
        let one = ToolCatalog::new(vec![svc("weather")], vec![tool("getWeather", "weather")]).unwrap();
        assert_eq!(one.render_prompt(), "getWeather: getWeather tool (weather)");
        let c = weather_news();
        assert_eq!(c.render_prompt(), c.render_prompt());
        assert_eq!(c.render_prompt().lines().count(), 2);
    }

    proptest! {
        #[test]
        fn levenshtein_matches_recursive_oracle(a in "[a-c]{0,8}", b in "[a-c]{0,8}") {
            prop_assert_eq!(levenshtein(&a, &b), dist(&a, &b));
        }

        #[test]
        fn catalog_round_trips(names in proptest::collection::btree_set("[a-z][a-z0-9_]{0,10}", 1..8)) {
            let tools: Vec<Tool> = names.iter().map(|n| tool(n, "s")).collect();
            let c = ToolCatalog::new(vec![svc("s")], tools.clone()).unwrap();
            prop_assert_eq!(c.render_prompt().lines().count(), tools.len());
            for t in &tools {
                prop_assert_eq!(c.lookup(&t.name), Some(t));
                let (found, d) = c.nearest_tool(&t.name).unwrap();
                prop_assert_eq!((found, d), (t, 0));
            }
        }
    }
}
