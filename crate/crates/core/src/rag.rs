//! JSON RAG: shrinking oversized tool responses to the fields a task needs.
//!
//! The JsonRag model only names paths; values are always copied from the
//! source document, so a reduced result can never contain a value the tool
//! did not return.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;
use tracing::debug;

use crate::gateway::{Exchange, Gateway, GatewayError, ModelRole};
use crate::jsonpath::{JsonPath, Segment};
use crate::templates::{render, Templates};
use crate::text::char_len;

pub const DEFAULT_PREVIEW_LEN: usize = 48;

/// Smallest budget that always admits a result (`{}`, `[]` or `""`).
pub const MIN_BUDGET: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagTask {
    pub instruction: String,
    pub document: Value,
    pub budget_chars: usize,
}

impl RagTask {
    pub fn new(instruction: impl Into<String>, document: Value, budget_chars: usize) -> Result<Self, RagError> {
        if budget_chars < MIN_BUDGET {
            return Err(RagError::BudgetTooSmall(budget_chars));
        }
        Ok(Self {
            instruction: instruction.into(),
            document,
            budget_chars,
        })
    }
}

#[derive(Debug, Error)]
pub enum RagError {
    #[error("no valid paths in selection reply")]
    NoValidPaths,
    #[error("path '{0}' does not exist in the document")]
    InvalidPath(String),
    #[error("budget {0} is below the minimum of {MIN_BUDGET}")]
    BudgetTooSmall(usize),
    #[error("preview length must be positive")]
    ZeroPreview,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Compact serialized length in characters.
pub fn serialized_len(value: &Value) -> usize {
    char_len(&value.to_string())
}

/// All leaves in depth-first document order. Scalars and empty containers
/// are leaves; a scalar document is its own (root) leaf.
pub fn leaves(doc: &Value) -> Vec<(JsonPath, &Value)> {
    fn walk<'a>(node: &'a Value, path: JsonPath, out: &mut Vec<(JsonPath, &'a Value)>) {
        match node {
            Value::Object(map) if !map.is_empty() => {
                for (k, v) in map {
                    walk(v, path.child(Segment::Key(k.clone())), out);
                }
            }
            Value::Array(items) if !items.is_empty() => {
                for (i, v) in items.iter().enumerate() {
                    walk(v, path.child(Segment::Index(i)), out);
                }
            }
            _ => out.push((path, node)),
        }
    }
    let mut out = Vec::new();
    walk(doc, JsonPath::root(), &mut out);
    out
}

/// Leaf paths with their serialized values truncated to `preview_len` chars.
pub fn flatten_paths(doc: &Value, preview_len: usize) -> Result<Vec<(JsonPath, String)>, RagError> {
    if preview_len == 0 {
        return Err(RagError::ZeroPreview);
    }
    Ok(leaves(doc)
        .into_iter()
        .map(|(path, v)| (path, v.to_string().chars().take(preview_len).collect()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub paths: Vec<JsonPath>,
    /// Reply lines that were not valid paths of the document.
    pub discarded: Vec<String>,
    pub exchange: Exchange,
}

pub fn build_select_prompt(task: &RagTask, preview_len: usize, templates: &Templates) -> Result<String, RagError> {
    let listing = flatten_paths(&task.document, preview_len)?
        .into_iter()
        .map(|(p, preview)| format!("{p} = {preview}"))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(render(
        &templates.jsonrag,
        &[("instruction", task.instruction.trim()), ("paths", &listing)],
    ))
}

/// Parses a one-path-per-line reply against `doc`. Returns the valid paths,
/// deduplicated and in document order, plus the discarded lines.
pub fn parse_selection(reply: &str, doc: &Value) -> (Vec<JsonPath>, Vec<String>) {
    let mut discarded = Vec::new();
    let mut seen = BTreeSet::new();
    let mut keyed = Vec::new();
    for line in reply.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let position = JsonPath::parse(line)
            .ok()
            .and_then(|p| p.document_position(doc).map(|pos| (pos, p)));
        match position {
            Some((pos, path)) => {
                if seen.insert(path.clone()) {
                    keyed.push((pos, path));
                }
            }
            None => discarded.push(line.to_string()),
        }
    }
    keyed.sort();
    (keyed.into_iter().map(|(_, p)| p).collect(), discarded)
}

pub fn select_paths(
    task: &RagTask,
    gateway: &Gateway,
    templates: &Templates,
    preview_len: usize,
) -> Result<Selection, RagError> {
    let prompt = build_select_prompt(task, preview_len, templates)?;
    let (completion, exchange) = gateway.exchange(ModelRole::JsonRag, &prompt)?;
    let (paths, discarded) = parse_selection(&completion.text, &task.document);
    if !discarded.is_empty() {
        debug!(?discarded, "discarded invalid selection lines");
    }
    if paths.is_empty() {
        return Err(RagError::NoValidPaths);
    }
    Ok(Selection {
        paths,
        discarded,
        exchange,
    })
}

/// Minimal sub-document containing exactly the addressed nodes. Object key
/// order is preserved; arrays keep only addressed indices, compacted in
/// their original relative order.
pub fn project(doc: &Value, paths: &[JsonPath]) -> Result<Value, RagError> {
    if let Some(bad) = paths.iter().find(|p| p.resolve(doc).is_none()) {
        return Err(RagError::InvalidPath(bad.to_string()));
    }
    let selectors: Vec<&[Segment]> = paths.iter().map(JsonPath::segments).collect();
    Ok(project_node(doc, &selectors))
}

fn project_node(node: &Value, selectors: &[&[Segment]]) -> Value {
    if selectors.iter().any(|s| s.is_empty()) {
        return node.clone();
    }
    match node {
        Value::Object(map) => {
            let mut out = Map::new();
            for (k, v) in map {
                let rest: Vec<&[Segment]> = selectors
                    .iter()
                    .filter(|s| matches!(&s[0], Segment::Key(key) if key == k))
                    .map(|s| &s[1..])
                    .collect();
                if !rest.is_empty() {
                    out.insert(k.clone(), project_node(v, &rest));
                }
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(
            items
                .iter()
                .enumerate()
                .filter_map(|(i, v)| {
                    let rest: Vec<&[Segment]> = selectors
                        .iter()
                        .filter(|s| s[0] == Segment::Index(i))
                        .map(|s| &s[1..])
                        .collect();
                    (!rest.is_empty()).then(|| project_node(v, &rest))
                })
                .collect(),
        ),
        scalar => scalar.clone(),
    }
}

fn longest_string_leaf(doc: &Value) -> Option<JsonPath> {
    let mut best: Option<(usize, JsonPath)> = None;
    for (path, v) in leaves(doc) {
        if let Value::String(s) = v {
            let len = serialized_len(v);
            if !s.is_empty() && best.as_ref().is_none_or(|(b, _)| len > *b) {
                best = Some((len, path));
            }
        }
    }
    best.map(|(_, p)| p)
}

fn remove_last_leaf(doc: &mut Value) -> bool {
    let Some((path, _)) = leaves(doc).pop() else {
        return false;
    };
    let Some((last, parent)) = path.segments().split_last() else {
        return false;
    };
    let parent = JsonPath::new(parent.to_vec());
    match (parent.resolve_mut(doc), last) {
        (Some(Value::Object(map)), Segment::Key(k)) => map.shift_remove(k).is_some(),
        (Some(Value::Array(items)), Segment::Index(i)) => {
            items.remove(*i);
            true
        }
        _ => false,
    }
}

/// Shrinks `value` until its serialized form fits `budget` characters:
/// string leaves are truncated longest-first, then trailing leaves are
/// dropped, and finally an empty container (or `""`) is returned.
pub fn fit_to_budget(mut value: Value, budget: usize) -> Value {
    let budget = budget.max(MIN_BUDGET);
    loop {
        let len = serialized_len(&value);
        if len <= budget {
            return value;
        }
        let Some(path) = longest_string_leaf(&value) else { break };
        if let Some(Value::String(s)) = path.resolve_mut(&mut value) {
            let keep = char_len(s).saturating_sub(len - budget);
            *s = s.chars().take(keep).collect();
        }
    }
    while serialized_len(&value) > budget {
        if !remove_last_leaf(&mut value) {
            break;
        }
    }
    if serialized_len(&value) <= budget {
        return value;
    }
    match value {
        Value::Object(_) => Value::Object(Map::new()),
        Value::Array(_) => Value::Array(Vec::new()),
        _ => Value::String(String::new()),
    }
}

/// Projection followed by budget fitting; the deterministic half of
/// [`reduce`].
pub fn reduce_with_selection(doc: &Value, paths: &[JsonPath], budget: usize) -> Result<Value, RagError> {
    Ok(fit_to_budget(project(doc, paths)?, budget))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub value: Value,
    /// Present when the document was over budget and a selection was made.
    pub selection: Option<Selection>,
}

/// Returns the document unchanged when it fits; otherwise asks the JsonRag
/// model for paths, projects, and fits the projection to the budget.
pub fn reduce(
    task: &RagTask,
    gateway: &Gateway,
    templates: &Templates,
    preview_len: usize,
) -> Result<Reduction, RagError> {
    if serialized_len(&task.document) <= task.budget_chars {
        return Ok(Reduction {
            value: task.document.clone(),
            selection: None,
        });
    }
    let selection = select_paths(task, gateway, templates, preview_len)?;
    let value = reduce_with_selection(&task.document, &selection.paths, task.budget_chars)?;
    Ok(Reduction {
        value,
        selection: Some(selection),
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use serde_json::json;

    use super::*;
    use crate::gateway::{
        BackendSpec, BoundBackend, CoalitionConfig, FixtureEntry, ModelRegistry, ModelSpec, ScriptedBackend,
    };

    fn p(s: &str) -> JsonPath {
        s.parse().unwrap()
    }

    fn gateway(entries: Vec<FixtureEntry>) -> Gateway {
        let mut reg = ModelRegistry::new();
        reg.register(
            ModelSpec::new("s", BackendSpec::TemplateEcho),
            BoundBackend::Chat(Arc::new(ScriptedBackend::from_entries(entries))),
        )
        .unwrap();
        Gateway::new(Arc::new(reg), CoalitionConfig::single_model("s")).unwrap()
    }

    pub(crate) fn country_doc() -> Value {
        json!({
            "country": {
                "name": "France",
                "capital": "Paris",
                "leader": "Emmanuel Macron",
                "population": 68042591,
                "languages": ["French"],
                "currency": {"code": "EUR", "name": "Euro"}
            },
            "continent": "Europe",
            "neighbours": ["Belgium", "Germany", "Italy", "Luxembourg", "Monaco", "Spain", "Switzerland", "Andorra"],
            "summary": "France is a country located primarily in Western Europe. It also comprises overseas regions and territories in the Americas and the Atlantic, Pacific and Indian oceans."
        })
    }

    #[test]
    fn flatten_examples() {
        let flat = flatten_paths(&json!({"a": {"b": 1, "c": 2}}), 48).unwrap();
        assert_eq!(flat, vec![(p("a.b"), "1".to_string()), (p("a.c"), "2".to_string())]);
        let flat = flatten_paths(&json!([10, 20]), 48).unwrap();
        assert_eq!(flat, vec![(p("[0]"), "10".to_string()), (p("[1]"), "20".to_string())]);
        let flat = flatten_paths(&json!(5), 48).unwrap();
        assert_eq!(flat, vec![(JsonPath::root(), "5".to_string())]);
        let flat = flatten_paths(&json!({"s": "abcdef", "e": {}}), 3).unwrap();
        assert_eq!(flat, vec![(p("s"), "\"ab".to_string()), (p("e"), "{}".to_string())]);
        assert!(matches!(flatten_paths(&json!(1), 0), Err(RagError::ZeroPreview)));
    }

    #[test]
    fn project_examples() {
        let doc = json!({"a": {"b": 1, "c": 2}});
        assert_eq!(project(&doc, &[p("a.b")]).unwrap(), json!({"a": {"b": 1}}));
        let all: Vec<JsonPath> = leaves(&doc).into_iter().map(|(p, _)| p).collect();
        assert_eq!(project(&doc, &all).unwrap(), doc);
        assert_eq!(project(&json!([10, 20, 30]), &[p("[2]")]).unwrap(), json!([30]));
        assert_eq!(
            project(&json!([10, 20, 30]), &[p("[2]"), p("[0]")]).unwrap(),
            json!([10, 30])
        );
        assert!(matches!(project(&doc, &[p("a.z")]), Err(RagError::InvalidPath(_))));
        assert_eq!(project(&doc, &[p("a")]).unwrap(), doc);
        assert_eq!(project(&doc, &[JsonPath::root()]).unwrap(), doc);
    }

    #[test]
    fn selection_of_country_fields() {
        let doc = country_doc();
        let gw = gateway(vec![FixtureEntry::queued(
            ModelRole::JsonRag,
            "country.name\ncountry.leader\ncontinent",
        )]);
        let task = RagTask::new("Name, leader and continent of the country", doc, 120).unwrap();
        let sel = select_paths(&task, &gw, &Templates::builtin(), DEFAULT_PREVIEW_LEN).unwrap();
        assert_eq!(sel.paths, vec![p("country.name"), p("country.leader"), p("continent")]);
        assert!(sel.discarded.is_empty());
    }

    #[test]
    fn selection_discards_and_dedupes() {
        let doc = country_doc();
        let (paths, discarded) = parse_selection(
            "continent\ncountry.president\n\n country.name \ncontinent\nnot a [path",
            &doc,
        );
        assert_eq!(paths, vec![p("country.name"), p("continent")]);
        assert_eq!(
            discarded,
            vec!["country.president".to_string(), "not a [path".to_string()]
        );
        let gw = gateway(vec![FixtureEntry::queued(ModelRole::JsonRag, "nothing.here")]);
        let task = RagTask::new("x", doc, 10).unwrap();
        assert!(matches!(
            select_paths(&task, &gw, &Templates::builtin(), 48),
            Err(RagError::NoValidPaths)
        ));
    }

    #[test]
    fn reduce_short_circuits_small_docs() {
        let gw = gateway(vec![]);
        let task = RagTask::new("x", json!({"a": 1}), 100).unwrap();
        let out = reduce(&task, &gw, &Templates::builtin(), 48).unwrap();
        assert_eq!(out.value, json!({"a": 1}));
        assert!(out.selection.is_none());
    }

    #[test]
    fn reduce_projects_country_doc() {
        let gw = gateway(vec![FixtureEntry::queued(
            ModelRole::JsonRag,
            "country.name\ncountry.leader\ncontinent",
        )]);
        let task = RagTask::new("country name, leader and continent", country_doc(), 200).unwrap();
        let out = reduce(&task, &gw, &Templates::builtin(), 48).unwrap();
        assert_eq!(
            out.value,
            json!({"country": {"name": "France", "leader": "Emmanuel Macron"}, "continent": "Europe"})
        );
    }

    #[test]
    fn reduce_truncates_single_huge_leaf() {
        let gw = gateway(vec![FixtureEntry::queued(ModelRole::JsonRag, "text")]);
        let doc = json!({"text": "x".repeat(5000)});
        let task = RagTask::new("x", doc, 64).unwrap();
        let out = reduce(&task, &gw, &Templates::builtin(), 48).unwrap();
        assert_eq!(serialized_len(&out.value), 64);
        assert_eq!(out.value["text"].as_str().unwrap().len(), 64 - r#"{"text":""}"#.len());
    }

    #[test]
    fn fit_truncates_longest_first_then_drops() {
        let v = fit_to_budget(json!({"a": "aaaaaaaaaa", "b": "bbb"}), 20);
        assert_eq!(v, json!({"a": "aa", "b": "bbb"}));
        let numbers = json!({"a": 123456, "b": 789012, "c": 345678});
        let v = fit_to_budget(numbers, 23);
        assert_eq!(v, json!({"a": 123456, "b": 789012}));
        assert_eq!(fit_to_budget(json!([1, 2, 3]), 2), json!([]));
        assert_eq!(fit_to_budget(json!(123456), 2), json!(""));
        let escaped = fit_to_budget(json!({"q": "\"\"\"\"\"\"\"\"\"\""}), 12);
        assert!(serialized_len(&escaped) <= 12);
    }

    #[test]
    fn budget_minimum() {
        assert!(matches!(
            RagTask::new("x", json!(1), 1),
            Err(RagError::BudgetTooSmall(1))
        ));
    }
}
