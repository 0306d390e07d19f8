//! Tool execution against live HTTP services or simulated fixtures.
//!
//! Fixture set file: a JSON array of
//! `{ "method": "GET", "path": "/currency/convert", "query": { "from": "USD" }, "status": 200, "body": {...} }`.
//! `query` is optional; a fixture without it only serves path-only fallbacks.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::catalog::{HttpMethod, ParamLocation, Service, Tool};
use crate::slots::{ParamMap, ParamValue};

/// Characters left unescaped in path segments and query components.
const UNRESERVED: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'.').remove(b'~');

pub const DEFAULT_TIMEOUT_SECS: u64 = 30;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: Tool,
    pub params: ParamMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub status: u16,
    pub body: Value,
    pub elapsed_ms: u64,
}

/// A call resolved to concrete HTTP parts. The query is sorted by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedRequest {
    pub method: HttpMethod,
    pub path: String,
    pub query: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Value>,
}

impl PreparedRequest {
    /// `path?k=v&...` with percent-encoded components.
    pub fn path_and_query(&self) -> String {
        if self.query.is_empty() {
            return self.path.clone();
        }
        let query = self
            .query
            .iter()
            .map(|(k, v)| {
                format!(
                    "{}={}",
                    utf8_percent_encode(k, UNRESERVED),
                    utf8_percent_encode(v, UNRESERVED)
                )
            })
            .collect::<Vec<_>>()
            .join("&");
        format!("{}?{query}", self.path)
    }
}

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("transport failure calling {url}: {detail}")]
    Transport { url: String, detail: String },
    #[error("no fixture for {method} {path}")]
    NoFixtureMatch { method: &'static str, path: String },
    #[error("response from {url} is not JSON: {detail}")]
    NonJsonBody { url: String, detail: String },
    #[error("service '{0}' is not available for live calls")]
    MissingService(String),
    #[error("path parameter '{0}' has no value")]
    MissingPathParam(String),
    #[error("fixture file {path}: {detail}")]
    Fixture { path: String, detail: String },
}

fn value_text(v: &ParamValue) -> String {
    v.to_string()
}

/// Expands the path template and splits parameters by location.
pub fn prepare_request(call: &ToolCall) -> Result<PreparedRequest, ToolError> {
    let mut path = call.tool.path_template.clone();
    let mut query = BTreeMap::new();
    let mut body = serde_json::Map::new();
    for spec in &call.tool.parameters {
        let Some(value) = call.params.get(&spec.name) else {
            if spec.location == ParamLocation::Path {
                return Err(ToolError::MissingPathParam(spec.name.clone()));
            }
            continue;
        };
        match spec.location {
            ParamLocation::Path => {
                let encoded = utf8_percent_encode(&value_text(value), UNRESERVED).to_string();
                path = path.replace(&format!("{{{}}}", spec.name), &encoded);
            }
            ParamLocation::Query => {
                query.insert(spec.name.clone(), value_text(value));
            }
            ParamLocation::Body => {
                body.insert(spec.name.clone(), value.to_json());
            }
        }
    }
    Ok(PreparedRequest {
        method: call.tool.http_method,
        path,
        query,
        body: (!body.is_empty()).then_some(Value::Object(body)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimFixture {
    pub method: HttpMethod,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<BTreeMap<String, Value>>,
    #[serde(default = "ok_status")]
    pub status: u16,
    pub body: Value,
}

fn ok_status() -> u16 {
    200
}

fn canonical_query(query: &BTreeMap<String, Value>) -> BTreeMap<String, String> {
    query
        .iter()
        .map(|(k, v)| {
            let text = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            (k.clone(), text)
        })
        .collect()
}

/// Immutable set of canned responses.
#[derive(Debug, Clone, Default)]
pub struct FixtureSet {
    fixtures: Vec<SimFixture>,
    canonical: Vec<Option<BTreeMap<String, String>>>,
    by_route: HashMap<(HttpMethod, String), Vec<usize>>,
}

impl FixtureSet {
    pub fn new(fixtures: Vec<SimFixture>) -> Self {
        let mut by_route: HashMap<(HttpMethod, String), Vec<usize>> = HashMap::new();
        for (i, f) in fixtures.iter().enumerate() {
            by_route.entry((f.method, f.path.clone())).or_default().push(i);
        }
        let canonical = fixtures.iter().map(|f| f.query.as_ref().map(canonical_query)).collect();
        Self {
            fixtures,
            canonical,
            by_route,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ToolError> {
        Self::load_all(std::slice::from_ref(&path))
    }

    /// Concatenates several fixture files in order.
    pub fn load_all<P: AsRef<Path>>(paths: &[P]) -> Result<Self, ToolError> {
        let mut all = Vec::new();
        for path in paths {
            let path = path.as_ref();
            let err = |detail: String| ToolError::Fixture {
                path: path.display().to_string(),
                detail,
            };
            let raw = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
            let mut fixtures: Vec<SimFixture> = serde_json::from_str(&raw).map_err(|e| err(e.to_string()))?;
            all.append(&mut fixtures);
        }
        Ok(Self::new(all))
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }

    /// Exact (method, path, query) match first; otherwise the first fixture
    /// on the route without a query, then the first fixture on the route.
    pub fn find(&self, request: &PreparedRequest) -> Option<&SimFixture> {
        let candidates = self.by_route.get(&(request.method, request.path.clone()))?;
        let exact = candidates
            .iter()
            .find(|&&i| self.canonical[i].as_ref() == Some(&request.query));
        let fallback = || {
            candidates
                .iter()
                .find(|&&i| self.canonical[i].is_none())
                .or_else(|| candidates.first())
        };
        exact.or_else(fallback).map(|&i| &self.fixtures[i])
    }
}

/// Counting semaphore bounding concurrent live requests.
#[derive(Debug)]
struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug)]
pub struct LiveClient {
    agent: ureq::Agent,
    limiter: Limiter,
}

impl LiveClient {
    pub fn new(timeout: Duration, max_in_flight: usize) -> Self {
        Self {
            agent: ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .http_status_as_error(false)
                .build()
                .into(),
            limiter: Limiter {
                max: max_in_flight.max(1),
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
            },
        }
    }

    pub fn max_in_flight(&self) -> usize {
        self.limiter.max
    }

    fn send(&self, service: &Service, request: &PreparedRequest) -> Result<(u16, String, String), ToolError> {
        let url = format!("{}{}", service.base_url.trim_end_matches('/'), request.path_and_query());
        let transport = |e: ureq::Error| ToolError::Transport {
            url: url.clone(),
            detail: e.to_string(),
        };
        let _slot = self.limiter.acquire();
        let result = match (request.method, &request.body) {
            (HttpMethod::GET, _) => {
                let mut b = self.agent.get(&url);
                for (k, v) in &service.headers {
                    b = b.header(k, v);
                }
                b.call()
            }
            (HttpMethod::DELETE, None) => {
                let mut b = self.agent.delete(&url);
                for (k, v) in &service.headers {
                    b = b.header(k, v);
                }
                b.call()
            }
            (method, body) => {
                let mut b = match method {
                    HttpMethod::POST => self.agent.post(&url),
                    HttpMethod::PUT => self.agent.put(&url),
                    _ => self.agent.delete(&url).force_send_body(),
                };
                for (k, v) in &service.headers {
                    b = b.header(k, v);
                }
                match body {
                    Some(body) => b.send_json(body),
                    None => b.send_empty(),
                }
            }
        };
        let mut response = result.map_err(transport)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(transport)?;
        Ok((status, text, url))
    }
}

impl Default for LiveClient {
    fn default() -> Self {
        Self::new(Duration::from_secs(DEFAULT_TIMEOUT_SECS), DEFAULT_MAX_IN_FLIGHT)
    }
}

#[derive(Debug)]
pub enum InvocationMode {
    Live(LiveClient),
    Simulated(FixtureSet),
}

/// Executes one call. Simulated mode is a pure function of the call and the
/// fixture set (apart from `elapsed_ms`).
pub fn invoke(call: &ToolCall, service: Option<&Service>, mode: &InvocationMode) -> Result<ToolResult, ToolError> {
    let request = prepare_request(call)?;
    let started = Instant::now();
    let (status, body) = match mode {
        InvocationMode::Simulated(set) => {
            let fixture = set.find(&request).ok_or_else(|| ToolError::NoFixtureMatch {
                method: request.method.as_str(),
                path: request.path_and_query(),
            })?;
            (fixture.status, fixture.body.clone())
        }
        InvocationMode::Live(client) => {
            let service = service.ok_or_else(|| ToolError::MissingService(call.tool.service.clone()))?;
            let (status, text, url) = client.send(service, &request)?;
            let body = serde_json::from_str(&text).map_err(|e| ToolError::NonJsonBody {
                url,
                detail: e.to_string(),
            })?;
            (status, body)
        }
    };
    Ok(ToolResult {
        status,
        body,
        elapsed_ms: started.elapsed().as_millis() as u64,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use proptest::prelude::*;
    use serde_json::json;

    use super::*;
    use crate::catalog::ParameterSpec;
    use crate::catalog::ValueType;
    use crate::test_http::{serve_once, unused_port_url};

    fn param(name: &str, location: ParamLocation, value_type: ValueType) -> ParameterSpec {
        ParameterSpec {
            name: name.into(),
            location,
            value_type,
            required: true,
            semantic_query: false,
            description: String::new(),
        }
    }

    fn tool(method: HttpMethod, path: &str, params: Vec<ParameterSpec>) -> Tool {
        Tool {
            name: "t".into(),
            service: "svc".into(),
            http_method: method,
            path_template: path.into(),
            description: String::new(),
            parameters: params,
        }
    }

    fn call(tool: Tool, params: Value) -> ToolCall {
        let entries: BTreeMap<String, Value> = serde_json::from_value(params).unwrap();
        let params = ParamMap::validated(entries, &tool).unwrap();
        ToolCall { tool, params }
    }

    fn convert_call(from: &str, to: &str) -> ToolCall {
        call(
            tool(
                HttpMethod::GET,
                "/currency/convert",
                vec![
                    param("to", ParamLocation::Query, ValueType::String),
                    param("from", ParamLocation::Query, ValueType::String),
                ],
            ),
            json!({"from": from, "to": to}),
        )
    }

    fn service(base_url: &str) -> Service {
        Service {
            name: "svc".into(),
            description: String::new(),
            base_url: base_url.into(),
            headers: BTreeMap::from([("X-Api-Key".to_string(), "k".to_string())]),
        }
    }

    fn fixtures() -> FixtureSet {
        serde_json::from_value::<Vec<SimFixture>>(json!([
            {"method": "GET", "path": "/currency/convert", "query": {"from": "USD", "to": "GBP"}, "body": {"rate": 0.79}},
            {"method": "GET", "path": "/currency/convert", "body": {"rate": 1.0}},
            {"method": "GET", "path": "/flights/BA123", "status": 404, "body": {"error": "gone"}}
        ]))
        .map(FixtureSet::new)
        .unwrap()
    }

    #[test]
    fn path_expansion_and_encoding() {
        let c = call(
            tool(
                HttpMethod::GET,
                "/flights/{id}",
                vec![param("id", ParamLocation::Path, ValueType::String)],
            ),
            json!({"id": "BA123"}),
        );
        assert_eq!(prepare_request(&c).unwrap().path, "/flights/BA123");
        let c = call(c.tool.clone(), json!({"id": "a b/c"}));
        assert_eq!(prepare_request(&c).unwrap().path, "/flights/a%20b%2Fc");
        let r = prepare_request(&convert_call("US D", "GBP&")).unwrap();
        assert_eq!(r.path_and_query(), "/currency/convert?from=US%20D&to=GBP%26");
    }

    #[test]
    fn simulated_matching() {
        let mode = InvocationMode::Simulated(fixtures());
        let r = invoke(&convert_call("USD", "GBP"), None, &mode).unwrap();
        assert_eq!((r.status, r.body), (200, json!({"rate": 0.79})));
        let r = invoke(&convert_call("EUR", "GBP"), None, &mode).unwrap();
        assert_eq!(r.body, json!({"rate": 1.0}));
        let flights = call(
            tool(
                HttpMethod::GET,
                "/flights/{id}",
                vec![param("id", ParamLocation::Path, ValueType::String)],
            ),
            json!({"id": "BA123"}),
        );
        assert_eq!(invoke(&flights, None, &mode).unwrap().status, 404);
        let missing = call(flights.tool.clone(), json!({"id": "XX1"}));
        assert!(matches!(
            invoke(&missing, None, &mode),
            Err(ToolError::NoFixtureMatch { .. })
        ));
    }

    #[test]
    fn live_get_sends_query_and_headers() {
        let (url, handle) = serve_once(200, r#"{"rate":0.79}"#);
        let mode = InvocationMode::Live(LiveClient::default());
        let r = invoke(&convert_call("USD", "GBP"), Some(&service(&url)), &mode).unwrap();
        assert_eq!(r.body, json!({"rate": 0.79}));
        let req = handle.join().unwrap();
        assert!(
            req.head.starts_with("GET /currency/convert?from=USD&to=GBP HTTP/1.1"),
            "{}",
            req.head
        );
        assert!(req.head.to_ascii_lowercase().contains("x-api-key: k"));
    }

    #[test]
    fn live_post_sends_json_body() {
        let (url, handle) = serve_once(201, r#"{"id":1}"#);
        let c = call(
            tool(
                HttpMethod::POST,
                "/mail",
                vec![
                    param("to", ParamLocation::Body, ValueType::String),
                    param("n", ParamLocation::Body, ValueType::Integer),
                ],
            ),
            json!({"to": "a@b.c", "n": 2}),
        );
        let r = invoke(&c, Some(&service(&url)), &InvocationMode::Live(LiveClient::default())).unwrap();
        assert_eq!(r.status, 201);
        let req = handle.join().unwrap();
        assert!(req.head.starts_with("POST /mail HTTP/1.1"));
        assert_eq!(
            serde_json::from_str::<Value>(&req.body).unwrap(),
            json!({"n": 2, "to": "a@b.c"})
        );
    }

    #[test]
    fn live_errors() {
        let mode = InvocationMode::Live(LiveClient::new(Duration::from_secs(2), 1));
        let c = convert_call("USD", "GBP");
        assert!(matches!(
            invoke(&c, Some(&service(&unused_port_url())), &mode),
            Err(ToolError::Transport { .. })
        ));
        assert!(matches!(invoke(&c, None, &mode), Err(ToolError::MissingService(_))));
        let (url, handle) = serve_once(200, "not json");
        assert!(matches!(
            invoke(&c, Some(&service(&url)), &mode),
            Err(ToolError::NonJsonBody { .. })
        ));
        handle.join().unwrap();
    }

    proptest! {
        #[test]
        fn query_order_is_irrelevant(from in "[A-Z]{3}", to in "[A-Z]{3}") {
            let set = FixtureSet::new(vec![SimFixture {
                method: HttpMethod::GET,
                path: "/currency/convert".into(),
                query: Some(BTreeMap::from([("to".to_string(), json!(to)), ("from".to_string(), json!(from))])),
                status: 200,
                body: json!("exact"),
            }]);
            let mode = InvocationMode::Simulated(set);
            let a = convert_call(&from, &to);
            let mut b = a.clone();
            b.tool.parameters.reverse();
            prop_assert_eq!(invoke(&a, None, &mode).unwrap().body, json!("exact"));
            prop_assert_eq!(invoke(&b, None, &mode).unwrap().body, json!("exact"));
        }
    }
}
