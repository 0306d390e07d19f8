use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, Decoding, EmbeddingBackend, GatewayError, ModelRole};

fn agent(timeout_secs: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(timeout_secs)))
        .http_status_as_error(false)
        .build()
        .into()
}

fn bearer(auth_env: Option<&str>) -> Result<Option<String>, GatewayError> {
    match auth_env {
        None => Ok(None),
        Some(var) => std::env::var(var)
            .map(|token| Some(format!("Bearer {token}")))
            .map_err(|_| GatewayError::MissingSecret(var.to_string())),
    }
}

fn post_json(agent: &ureq::Agent, endpoint: &str, auth_env: Option<&str>, body: &Value) -> Result<Value, GatewayError> {
    let mut request = agent.post(endpoint);
    if let Some(header) = bearer(auth_env)? {
        request = request.header("Authorization", header);
    }
    let mut response = request
        .send_json(body)
        .map_err(|e| GatewayError::BackendUnreachable(e.to_string()))?;
    let status = response.status().as_u16();
    let text = response
        .body_mut()
        .read_to_string()
        .map_err(|e| GatewayError::BackendUnreachable(e.to_string()))?;
    if !(200..300).contains(&status) {
        return Err(GatewayError::InvalidResponse(format!("HTTP {status}: {text}")));
    }
    serde_json::from_str(&text).map_err(|e| GatewayError::InvalidResponse(e.to_string()))
}

/// Minimal chat-completion client: one user message in, first choice out.
#[derive(Debug, Clone)]
pub struct RemoteChatBackend {
    endpoint: String,
    model: String,
    auth_env: Option<String>,
    agent: ureq::Agent,
}

impl RemoteChatBackend {
    pub fn new(endpoint: &str, model: String, auth_env: Option<String>, timeout_secs: u64) -> Self {
        Self {
            endpoint: endpoint.to_string(),
            model,
            auth_env,
            agent: agent(timeout_secs),
        }
    }

    pub fn request_body(&self, prompt: &str, decoding: &Decoding) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": decoding.temperature,
            "max_tokens": decoding.max_new_tokens,
        });
        if let Some(seed) = decoding.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

/// Accepts `choices[0].message.content`, `choices[0].text`, or a top-level
/// `text` / `generated_text` field.
fn extract_text(v: &Value) -> Option<String> {
    let first = v.get("choices").and_then(|c| c.get(0));
    first
        .and_then(|c| c.pointer("/message/content"))
        .or_else(|| first.and_then(|c| c.get("text")))
        .or_else(|| v.get("text"))
        .or_else(|| v.get("generated_text"))
        .and_then(Value::as_str)
        .map(str::to_string)
}

impl ChatBackend for RemoteChatBackend {
    fn generate(&self, _: ModelRole, prompt: &str, decoding: &Decoding) -> Result<String, GatewayError> {
        let body = self.request_body(prompt, decoding);
        let reply = post_json(&self.agent, &self.endpoint, self.auth_env.as_deref(), &body)?;
        extract_text(&reply).ok_or_else(|| GatewayError::InvalidResponse("no generated text in response".into()))
    }
}

/// Sentence-embedding client: `{model, input}` in, `data[0].embedding` (or a
/// top-level `embedding`) out.
#[derive(Debug, Clone)]
pub struct RemoteEmbeddingBackend {
    endpoint: String,
    model: String,
    auth_env: Option<String>,
    agent: ureq::Agent,
}

impl RemoteEmbeddingBackend {
    pub fn new(endpoint: &str, model: String, auth_env: Option<String>, timeout_secs: u64) -> Self {
        Self {
            endpoint: endpoint.to_string(),
            model,
            auth_env,
            agent: agent(timeout_secs),
        }
    }
}

impl EmbeddingBackend for RemoteEmbeddingBackend {
    fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        let body = json!({"model": self.model, "input": text});
        let reply = post_json(&self.agent, &self.endpoint, self.auth_env.as_deref(), &body)?;
        let vector = reply
            .pointer("/data/0/embedding")
            .or_else(|| reply.get("embedding"))
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::InvalidResponse("no embedding in response".into()))?;
        vector
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| GatewayError::InvalidResponse("non-numeric embedding".into()))
            })
            .collect()
    }
}
