//! Slot filling: turning a plan step into a schema-valid parameter map.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::debug;

use crate::catalog::{Tool, ValueType};
use crate::gateway::{Exchange, Gateway, GatewayError, ModelRole};
use crate::planner::PlanStep;
use crate::rag::serialized_len;
use crate::templates::{render, Templates};
use crate::text::fold_name;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Boolean(bool),
    Integer(i64),
    Number(f64),
    String(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Integer(i) => Some(*i as f64),
            ParamValue::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            ParamValue::Boolean(b) => Value::Bool(*b),
            ParamValue::Integer(i) => Value::from(*i),
            ParamValue::Number(n) => Value::from(*n),
            ParamValue::String(s) => Value::String(s.clone()),
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Boolean(b) => write!(f, "{b}"),
            ParamValue::Integer(i) => write!(f, "{i}"),
            ParamValue::Number(n) => write!(f, "{n}"),
            ParamValue::String(s) => f.write_str(s),
        }
    }
}

/// Parameter assignment for one tool call. Only [`parse_params`] and
/// [`ParamMap::validated`] construct non-empty maps, so every instance
/// satisfies the tool schema it was checked against.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamMap(BTreeMap<String, ParamValue>);

impl ParamMap {
    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamValue)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_json(&self) -> Value {
        Value::Object(self.0.iter().map(|(k, v)| (k.clone(), v.to_json())).collect())
    }

    /// Checks `entries` against `tool`, applying the same coercions as
    /// [`parse_params`]. Unknown keys are rejected here rather than dropped.
    pub fn validated(entries: BTreeMap<String, Value>, tool: &Tool) -> Result<Self, SlotError> {
        if let Some(unknown) = entries.keys().find(|k| tool.parameter(k).is_none()) {
            return Err(SlotError::UnknownParameter(unknown.clone()));
        }
        let object = entries.into_iter().collect();
        project_object(object, tool).map(|(map, _)| map)
    }
}

/// Prior step results, reduced to the character budget.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContextStore {
    items: Vec<ContextItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextItem {
    pub step: usize,
    pub tool: String,
    pub result: Value,
}

impl ContextStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a reduced result. Steps must be strictly increasing and the
    /// result must fit in `budget` characters.
    pub fn push(&mut self, step: usize, tool: &str, result: Value, budget: usize) -> Result<(), SlotError> {
        if let Some(last) = self.items.last() {
            if step <= last.step {
                return Err(SlotError::ContextOrder { last: last.step, step });
            }
        }
        let len = serialized_len(&result);
        if len > budget {
            return Err(SlotError::ContextOverBudget { step, len, budget });
        }
        self.items.push(ContextItem {
            step,
            tool: tool.to_string(),
            result,
        });
        Ok(())
    }

    pub fn items(&self) -> &[ContextItem] {
        &self.items
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `step N (tool): {json}` lines, or `marker` when empty.
    pub fn render(&self, marker: &str) -> String {
        if self.items.is_empty() {
            return marker.to_string();
        }
        self.items
            .iter()
            .map(|i| format!("step {} ({}): {}", i.step, i.tool, i.result))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub const NO_PRIOR_RESULTS: &str = "(no prior results)";

#[derive(Debug, Error)]
pub enum SlotError {
    #[error("step tool '{step_tool}' does not match tool '{tool}'")]
    ToolMismatch { step_tool: String, tool: String },
    #[error("no JSON object found in model output")]
    NoJsonFound,
    #[error("missing required parameters: {}", .0.join(", "))]
    MissingRequired(Vec<String>),
    #[error("parameter '{0}' does not match its declared type")]
    TypeMismatch(String),
    #[error("parameter '{0}' is not declared by the tool")]
    UnknownParameter(String),
    #[error("context step {step} does not follow step {last}")]
    ContextOrder { last: usize, step: usize },
    #[error("context result for step {step} is {len} chars, over budget {budget}")]
    ContextOverBudget { step: usize, len: usize, budget: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub fn build_slotfill_prompt(
    step: &PlanStep,
    tool: &Tool,
    query: &str,
    ctx: &ContextStore,
    templates: &Templates,
) -> Result<String, SlotError> {
    if fold_name(&step.tool_name) != fold_name(&tool.name) {
        return Err(SlotError::ToolMismatch {
            step_tool: step.tool_name.clone(),
            tool: tool.name.clone(),
        });
    }
    let parameters = if tool.parameters.is_empty() {
        "(none)".to_string()
    } else {
        tool.parameters
            .iter()
            .map(|p| {
                format!(
                    "- {} ({}, {}): {}",
                    p.name,
                    p.value_type,
                    if p.required { "required" } else { "optional" },
                    p.description
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    let intent = if step.intent.is_empty() { "(none)" } else { &step.intent };
    Ok(render(
        &templates.slotfill,
        &[
            ("query", query.trim()),
            ("step", &step.index.to_string()),
            ("tool", &tool.name),
            ("intent", intent),
            ("description", &tool.description),
            ("parameters", &parameters),
            ("context", &ctx.render(NO_PRIOR_RESULTS)),
        ],
    ))
}

/// Finds the first balanced `{...}` span that parses as a JSON object.
fn first_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    let bytes = text.as_bytes();
    let mut search_from = 0;
    while let Some(offset) = text[search_from..].find('{') {
        let start = search_from + offset;
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        let mut end = None;
        for (i, &b) in bytes.iter().enumerate().skip(start) {
            if in_string {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_string = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        if let Some(end) = end {
            if let Ok(Value::Object(map)) = serde_json::from_str(&text[start..=end]) {
                return Some(map);
            }
        }
        search_from = start + 1;
    }
    None
}

fn coerce(value: Value, ty: ValueType) -> Result<Option<ParamValue>, ()> {
    Ok(Some(match (ty, value) {
        (_, Value::Null) => return Ok(None),
        (ValueType::String, Value::String(s)) => ParamValue::String(s),
        (ValueType::String, Value::Number(n)) => ParamValue::String(n.to_string()),
        (ValueType::String, Value::Bool(b)) => ParamValue::String(b.to_string()),
        (ValueType::Integer, Value::Number(n)) => match n.as_i64() {
            Some(i) => ParamValue::Integer(i),
            None => ParamValue::Integer(exact_int(n.as_f64().ok_or(())?)?),
        },
        (ValueType::Integer, Value::String(s)) => {
            let s = s.trim();
            match s.parse::<i64>() {
                Ok(i) => ParamValue::Integer(i),
                Err(_) => ParamValue::Integer(exact_int(s.parse::<f64>().map_err(|_| ())?)?),
            }
        }
        (ValueType::Number, Value::Number(n)) => match n.as_i64() {
            Some(i) => ParamValue::Number(i as f64),
            None => ParamValue::Number(n.as_f64().ok_or(())?),
        },
        (ValueType::Number, Value::String(s)) => {
            let n: f64 = s.trim().parse().map_err(|_| ())?;
            if !n.is_finite() {
                return Err(());
            }
            ParamValue::Number(n)
        }
        (ValueType::Boolean, Value::Bool(b)) => ParamValue::Boolean(b),
        (ValueType::Boolean, Value::String(s)) => match s.trim().to_ascii_lowercase().as_str() {
            "true" => ParamValue::Boolean(true),
            "false" => ParamValue::Boolean(false),
            _ => return Err(()),
        },
        _ => return Err(()),
    }))
}

/// Integral floats within i64 range convert; anything else is lossy.
fn exact_int(f: f64) -> Result<i64, ()> {
    if f.is_finite() && f.fract() == 0.0 && f.abs() < 9.0e15 {
        Ok(f as i64)
    } else {
        Err(())
    }
}

fn project_object(object: serde_json::Map<String, Value>, tool: &Tool) -> Result<(ParamMap, Vec<String>), SlotError> {
    let mut entries = BTreeMap::new();
    let mut dropped = Vec::new();
    for (key, value) in object {
        let Some(spec) = tool.parameter(&key) else {
            dropped.push(key);
            continue;
        };
        match coerce(value, spec.value_type) {
            Ok(Some(v)) => {
                entries.insert(key, v);
            }
            Ok(None) => {}
            Err(()) => return Err(SlotError::TypeMismatch(key)),
        }
    }
    let missing: Vec<String> = tool
        .parameters
        .iter()
        .filter(|p| p.required && !entries.contains_key(&p.name))
        .map(|p| p.name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(SlotError::MissingRequired(missing));
    }
    Ok((ParamMap(entries), dropped))
}

/// Extracts the first JSON object in `text` and validates it against `tool`.
/// Keys outside the schema are dropped; numeric and boolean strings are
/// coerced to the declared type when lossless; `null` counts as absent.
pub fn parse_params(text: &str, tool: &Tool) -> Result<ParamMap, SlotError> {
    let object = first_json_object(text).ok_or(SlotError::NoJsonFound)?;
    let (map, dropped) = project_object(object, tool)?;
    if !dropped.is_empty() {
        debug!(tool = %tool.name, ?dropped, "dropped parameters outside the tool schema");
    }
    Ok(map)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotFill {
    pub params: ParamMap,
    pub attempts: usize,
    pub exchanges: Vec<Exchange>,
}

/// Failed slot filling, with the exchanges made before giving up.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct SlotFailure {
    #[source]
    pub error: SlotError,
    pub exchanges: Vec<Exchange>,
}

impl From<SlotError> for SlotFailure {
    fn from(error: SlotError) -> Self {
        Self {
            error,
            exchanges: Vec::new(),
        }
    }
}

/// One attempt plus at most one retry carrying the parse error.
pub fn fill_slots(
    step: &PlanStep,
    tool: &Tool,
    query: &str,
    ctx: &ContextStore,
    gateway: &Gateway,
    templates: &Templates,
) -> Result<SlotFill, SlotFailure> {
    let prompt = build_slotfill_prompt(step, tool, query, ctx, templates)?;
    let mut exchanges = Vec::with_capacity(2);
    let fail = |error: SlotError, exchanges: Vec<Exchange>| SlotFailure { error, exchanges };

    let (first, exchange) = match gateway.exchange(ModelRole::SlotFiller, &prompt) {
        Ok(v) => v,
        Err(e) => return Err(fail(e.into(), exchanges)),
    };
    exchanges.push(exchange);
    let error = match parse_params(&first.text, tool) {
        Ok(params) => {
            return Ok(SlotFill {
                params,
                attempts: 1,
                exchanges,
            })
        }
        Err(e) => e,
    };

    let retry_prompt = format!(
        "{prompt}\n\n{}",
        render(&templates.slotfill_retry, &[("error", &error.to_string())])
    );
    let (second, exchange) = match gateway.exchange(ModelRole::SlotFiller, &retry_prompt) {
        Ok(v) => v,
        Err(e) => return Err(fail(e.into(), exchanges)),
    };
    exchanges.push(exchange);
    match parse_params(&second.text, tool) {
        Ok(params) => Ok(SlotFill {
            params,
            attempts: 2,
            exchanges,
        }),
        Err(e) => Err(fail(e, exchanges)),
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;
    use serde_json::json;

    use super::*;
    use crate::catalog::{HttpMethod, ParamLocation, ParameterSpec};
    use crate::gateway::{
        BackendSpec, BoundBackend, CoalitionConfig, FixtureEntry, ModelRegistry, ModelSpec, ScriptedBackend,
    };

    fn param(name: &str, ty: ValueType, required: bool) -> ParameterSpec {
        ParameterSpec {
            name: name.into(),
            location: ParamLocation::Query,
            value_type: ty,
            required,
            semantic_query: false,
            description: format!("the {name}"),
        }
    }

    fn convert_tool() -> Tool {
        Tool {
            name: "convert".into(),
            service: "fx".into(),
            http_method: HttpMethod::GET,
            path_template: "/convert".into(),
            description: "Convert currency".into(),
            parameters: vec![
                param("from", ValueType::String, true),
                param("to", ValueType::String, true),
                param("amount", ValueType::Number, false),
            ],
        }
    }

    fn step(tool: &str) -> PlanStep {
        PlanStep {
            index: 1,
            tool_name: tool.into(),
            intent: "convert the money".into(),
        }
    }

    fn gateway(entries: Vec<FixtureEntry>) -> (Gateway, Arc<ScriptedBackend>) {
        let backend = Arc::new(ScriptedBackend::from_entries(entries));
        let mut reg = ModelRegistry::new();
        reg.register(
            ModelSpec::new("s", BackendSpec::TemplateEcho),
            BoundBackend::Chat(backend.clone()),
        )
        .unwrap();
        (
            Gateway::new(Arc::new(reg), CoalitionConfig::single_model("s")).unwrap(),
            backend,
        )
    }

    #[test]
    fn prompt_lists_parameters_and_marker() {
        let t = Templates::builtin();
        let p = build_slotfill_prompt(
            &step("convert"),
            &convert_tool(),
            "100 USD in GBP",
            &ContextStore::new(),
            &t,
        )
        .unwrap();
        for name in ["from", "to", "amount"] {
            assert!(p.contains(&format!("- {name} (")));
        }
        assert!(p.contains(NO_PRIOR_RESULTS));
        assert!(p.contains("100 USD in GBP") && p.contains("convert the money"));
        let again = build_slotfill_prompt(
            &step("convert"),
            &convert_tool(),
            "100 USD in GBP",
            &ContextStore::new(),
            &t,
        )
        .unwrap();
        assert_eq!(p, again);
        assert!(matches!(
            build_slotfill_prompt(&step("other"), &convert_tool(), "q", &ContextStore::new(), &t),
            Err(SlotError::ToolMismatch { .. })
        ));
    }

    #[test]
    fn prompt_includes_context_items() {
        let mut ctx = ContextStore::new();
        ctx.push(1, "listCurrencies", json!({"codes": ["USD"]}), 100).unwrap();
        let p = build_slotfill_prompt(&step("convert"), &convert_tool(), "q", &ctx, &Templates::builtin()).unwrap();
        assert!(p.contains(r#"step 1 (listCurrencies): {"codes":["USD"]}"#));
        assert!(!p.contains(NO_PRIOR_RESULTS));
    }

    #[test]
    fn context_invariants() {
        let mut ctx = ContextStore::new();
        ctx.push(2, "a", json!(1), 10).unwrap();
        assert!(matches!(
            ctx.push(2, "b", json!(1), 10),
            Err(SlotError::ContextOrder { .. })
        ));
        assert!(matches!(
            ctx.push(3, "b", json!("0123456789"), 10),
            Err(SlotError::ContextOverBudget { .. })
        ));
    }

    #[test]
    fn parse_direct_object() {
        let m = parse_params(r#"{"from":"USD","to":"GBP","amount":100}"#, &convert_tool()).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.get("amount"), Some(&ParamValue::Number(100.0)));
    }

    #[test]
    fn parse_reports_missing_required() {
        let err = parse_params(r#"Sure: {"from":"USD"}"#, &convert_tool()).unwrap_err();
        assert!(matches!(err, SlotError::MissingRequired(names) if names == vec!["to".to_string()]));
    }

    #[test]
    fn parse_reports_type_mismatch() {
        let err = parse_params(r#"{"amount":"abc"}"#, &convert_tool()).unwrap_err();
        assert!(matches!(err, SlotError::TypeMismatch(name) if name == "amount"));
    }

    #[test]
    fn parse_coerces_and_drops() {
        let mut tool = convert_tool();
        tool.parameters.push(param("days", ValueType::Integer, false));
        tool.parameters.push(param("live", ValueType::Boolean, false));
        let m = parse_params(
            r#"Here you go: {"from":"USD","to":"GBP","days":"100","live":"TRUE","extra":1,"amount":null}"#,
            &tool,
        )
        .unwrap();
        assert_eq!(m.get("days"), Some(&ParamValue::Integer(100)));
        assert_eq!(m.get("live"), Some(&ParamValue::Boolean(true)));
        assert!(m.get("extra").is_none());
        assert!(m.get("amount").is_none());
        assert!(matches!(
            parse_params(r#"{"from":"a","to":"b","days":"2.5"}"#, &tool),
            Err(SlotError::TypeMismatch(_))
        ));
        let m = parse_params(r#"{"from":"a","to":"b","days":3.0}"#, &tool).unwrap();
        assert_eq!(m.get("days"), Some(&ParamValue::Integer(3)));
    }

    #[test]
    fn parse_skips_braces_in_strings_and_invalid_spans() {
        let tool = convert_tool();
        let m = parse_params(r#"{not json} then {"from":"a}{","to":"b"}"#, &tool).unwrap();
        assert_eq!(m.get("from"), Some(&ParamValue::String("a}{".into())));
        assert!(matches!(
            parse_params("no json here", &tool),
            Err(SlotError::NoJsonFound)
        ));
        assert!(matches!(parse_params("[1, 2]", &tool), Err(SlotError::NoJsonFound)));
    }

    #[test]
    fn fill_first_try() {
        let (gw, _) = gateway(vec![FixtureEntry::queued(
            ModelRole::SlotFiller,
            r#"{"from":"USD","to":"GBP"}"#,
        )]);
        let out = fill_slots(
            &step("convert"),
            &convert_tool(),
            "q",
            &ContextStore::new(),
            &gw,
            &Templates::builtin(),
        )
        .unwrap();
        assert_eq!(out.attempts, 1);
        assert_eq!(out.params.len(), 2);
    }

    #[test]
    fn fill_retries_once_with_error_feedback() {
        let (gw, backend) = gateway(vec![
            FixtureEntry::queued(ModelRole::SlotFiller, "I think from is USD"),
            FixtureEntry::queued(ModelRole::SlotFiller, r#"{"from":"USD","to":"GBP"}"#),
            FixtureEntry::queued(ModelRole::SlotFiller, "unused"),
        ]);
        let out = fill_slots(
            &step("convert"),
            &convert_tool(),
            "q",
            &ContextStore::new(),
            &gw,
            &Templates::builtin(),
        )
        .unwrap();
        assert_eq!(out.attempts, 2);
        assert_eq!(out.exchanges.len(), 2);
        assert_ne!(out.exchanges[0].prompt_sha256, out.exchanges[1].prompt_sha256);
        assert_eq!(backend.remaining_queued(ModelRole::SlotFiller), 1);
    }

    #[test]
    fn fill_gives_up_after_two_calls() {
        let (gw, backend) = gateway(vec![
            FixtureEntry::queued(ModelRole::SlotFiller, "nope"),
            FixtureEntry::queued(ModelRole::SlotFiller, r#"{"from":"USD"}"#),
            FixtureEntry::queued(ModelRole::SlotFiller, r#"{"from":"USD","to":"GBP"}"#),
        ]);
        let err = fill_slots(
            &step("convert"),
            &convert_tool(),
            "q",
            &ContextStore::new(),
            &gw,
            &Templates::builtin(),
        )
        .unwrap_err();
        assert!(matches!(err.error, SlotError::MissingRequired(_)));
        assert_eq!(err.exchanges.len(), 2);
        assert_eq!(backend.remaining_queued(ModelRole::SlotFiller), 1);
    }

    #[test]
    fn validated_rejects_unknown_keys() {
        let mut entries = BTreeMap::new();
        entries.insert("from".to_string(), json!("USD"));
        entries.insert("to".to_string(), json!("GBP"));
        assert!(ParamMap::validated(entries.clone(), &convert_tool()).is_ok());
        entries.insert("bogus".to_string(), json!(1));
        assert!(matches!(
            ParamMap::validated(entries, &convert_tool()),
            Err(SlotError::UnknownParameter(_))
        ));
    }

    proptest! {
        #[test]
        fn output_is_schema_valid_or_error(
            keys in proptest::collection::btree_map("(from|to|amount|x|y)", prop_oneof![
                Just(json!("USD")), Just(json!(5)), Just(json!("7.5")), Just(json!(true)),
                Just(json!(null)), Just(json!([1])), Just(json!("abc"))
            ], 0..6)
        ) {
            let tool = convert_tool();
            let text = serde_json::to_string(&keys).unwrap();
            if let Ok(map) = parse_params(&text, &tool) {
                for (k, v) in map.iter() {
                    let spec = tool.parameter(k).expect("unknown keys never escape");
                    let ok = matches!(
                        (spec.value_type, v),
                        (ValueType::String, ParamValue::String(_)) | (ValueType::Number, ParamValue::Number(_))
                    );
                    prop_assert!(ok);
                }
                for p in tool.parameters.iter().filter(|p| p.required) {
                    prop_assert!(map.get(&p.name).is_some());
                }
            }
        }
    }
}
