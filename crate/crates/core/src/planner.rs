//! Plan generation, parsing, sanitisation and critique.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::ToolCatalog;
use crate::forge::PollutionKind;
use crate::gateway::{Exchange, Gateway, GatewayError, ModelRole};
use crate::templates::{render, Templates};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PlanStep {
    /// 1-based position in the plan.
    pub index: usize,
    pub tool_name: String,
    pub intent: String,
}

/// Ordered tool-use steps. Indices are always contiguous from 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(from = "Vec<StepRecord>", into = "Vec<StepRecord>")]
pub struct Plan {
    steps: Vec<PlanStep>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StepRecord {
    tool: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    intent: String,
}

impl From<Vec<StepRecord>> for Plan {
    fn from(records: Vec<StepRecord>) -> Self {
        Plan::from_steps(records.into_iter().map(|r| (r.tool, r.intent)))
    }
}

impl From<Plan> for Vec<StepRecord> {
    fn from(plan: Plan) -> Self {
        plan.steps
            .into_iter()
            .map(|s| StepRecord {
                tool: s.tool_name,
                intent: s.intent,
            })
            .collect()
    }
}

impl Plan {
    /// Builds a plan from `(tool, intent)` pairs, numbering from 1.
    pub fn from_steps<T, I>(steps: impl IntoIterator<Item = (T, I)>) -> Self
    where
        T: Into<String>,
        I: Into<String>,
    {
        Self {
            steps: steps
                .into_iter()
                .enumerate()
                .map(|(i, (tool, intent))| PlanStep {
                    index: i + 1,
                    tool_name: tool.into(),
                    intent: intent.into(),
                })
                .collect(),
        }
    }

    pub fn from_tools<S: Into<String>>(tools: impl IntoIterator<Item = S>) -> Self {
        Self::from_steps(tools.into_iter().map(|t| (t, String::new())))
    }

    pub fn steps(&self) -> &[PlanStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn tool_names(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.tool_name.as_str()).collect()
    }

    fn renumbered(steps: Vec<PlanStep>) -> Self {
        Self::from_steps(steps.into_iter().map(|s| (s.tool_name, s.intent)))
    }

    /// Canonical text: one `i. name: intent` line per step (`i. name` when
    /// the intent is empty).
    pub fn to_text(&self) -> String {
        self.steps
            .iter()
            .map(|s| {
                if s.intent.is_empty() {
                    format!("{}. {}", s.index, s.tool_name)
                } else {
                    format!("{}. {}: {}", s.index, s.tool_name, s.intent)
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedStep {
    pub index: usize,
    pub tool_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplacedStep {
    pub index: usize,
    pub from: String,
    pub to: String,
}

/// Edits made by [`sanitize_plan`]; indices refer to the input plan.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SanitizeLog {
    pub removed: Vec<RemovedStep>,
    pub replaced: Vec<ReplacedStep>,
}

impl SanitizeLog {
    pub fn is_empty(&self) -> bool {
        self.removed.is_empty() && self.replaced.is_empty()
    }

    pub fn edit_count(&self) -> usize {
        self.removed.len() + self.replaced.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CritiqueLevel {
    General,
    Assisted,
    Explicit,
}

impl CritiqueLevel {
    pub const ALL: [CritiqueLevel; 3] = [CritiqueLevel::General, CritiqueLevel::Assisted, CritiqueLevel::Explicit];

    pub fn as_str(self) -> &'static str {
        match self {
            CritiqueLevel::General => "general",
            CritiqueLevel::Assisted => "assisted",
            CritiqueLevel::Explicit => "explicit",
        }
    }
}

impl fmt::Display for CritiqueLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CritiqueLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "general" => Ok(CritiqueLevel::General),
            "assisted" => Ok(CritiqueLevel::Assisted),
            "explicit" => Ok(CritiqueLevel::Explicit),
            other => Err(format!("unknown critique level '{other}'")),
        }
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("no plan steps found in model output")]
    NoStepsFound,
    #[error("assisted critique needs a pollution kind")]
    MissingKind,
    #[error("explicit critique needs a detail message")]
    MissingDetail,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub fn build_plan_prompt(query: &str, catalog: &ToolCatalog, templates: &Templates) -> Result<String, PlanError> {
    if query.trim().is_empty() {
        return Err(PlanError::EmptyQuery);
    }
    Ok(render(
        &templates.plan,
        &[("query", query.trim()), ("catalog", &catalog.render_prompt())],
    ))
}

/// Step grammar, one per line.
pub const STEP_PATTERN: &str = r"^\s*(\d+)[.)]\s*([A-Za-z0-9_\-]+)\s*(?::\s*(.*))?$";

fn step_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(STEP_PATTERN).unwrap())
}

/// Parses numbered-list model output. Non-matching lines (preambles, blank
/// lines, commentary) are ignored; steps are renumbered in order of
/// appearance.
pub fn parse_plan(text: &str) -> Result<Plan, PlanError> {
    let steps: Vec<(String, String)> = text
        .lines()
        .filter_map(|line| step_regex().captures(line))
        .map(|c| {
            let intent = c.get(3).map_or("", |m| m.as_str().trim());
            (c[2].to_string(), intent.to_string())
        })
        .collect();
    if steps.is_empty() {
        return Err(PlanError::NoStepsFound);
    }
    Ok(Plan::from_steps(steps))
}

/// Resolves every step against the catalog. Unknown tools are replaced by
/// their nearest catalog tool when within threshold, otherwise removed.
/// Known tools are rewritten to their catalog spelling.
pub fn sanitize_plan(plan: &Plan, catalog: &ToolCatalog) -> (Plan, SanitizeLog) {
    let mut log = SanitizeLog::default();
    let mut kept = Vec::with_capacity(plan.len());
    for step in plan.steps() {
        if let Some(tool) = catalog.lookup(&step.tool_name) {
            kept.push(PlanStep {
                tool_name: tool.name.clone(),
                ..step.clone()
            });
        } else if let Some((tool, _)) = catalog.nearest_tool(&step.tool_name) {
            log.replaced.push(ReplacedStep {
                index: step.index,
                from: step.tool_name.clone(),
                to: tool.name.clone(),
            });
            kept.push(PlanStep {
                tool_name: tool.name.clone(),
                ..step.clone()
            });
        } else {
            log.removed.push(RemovedStep {
                index: step.index,
                tool_name: step.tool_name.clone(),
            });
        }
    }
    (Plan::renumbered(kept), log)
}

/// The feedback text for a critique round.
pub fn critique_message(
    kind: Option<PollutionKind>,
    level: CritiqueLevel,
    detail: Option<&str>,
    templates: &Templates,
) -> Result<String, PlanError> {
    match level {
        CritiqueLevel::General => Ok(templates.critique_general.clone()),
        CritiqueLevel::Assisted => Ok(match kind.ok_or(PlanError::MissingKind)? {
            PollutionKind::Ordering => templates.critique_assisted_ordering.clone(),
            PollutionKind::MissingStep => templates.critique_assisted_missing_step.clone(),
            PollutionKind::AddedStep => templates.critique_assisted_added_step.clone(),
            PollutionKind::AddedMultipleSteps => templates.critique_assisted_added_multiple_steps.clone(),
        }),
        CritiqueLevel::Explicit => {
            let detail = detail
                .filter(|d| !d.trim().is_empty())
                .ok_or(PlanError::MissingDetail)?;
            Ok(render(&templates.critique_explicit, &[("detail", detail)]))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CritiqueRequest {
    pub level: CritiqueLevel,
    #[serde(default)]
    pub kind: Option<PollutionKind>,
    #[serde(default)]
    pub detail: Option<String>,
}

impl CritiqueRequest {
    pub fn general() -> Self {
        Self {
            level: CritiqueLevel::General,
            kind: None,
            detail: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CritiqueRound {
    pub message: String,
    /// Whether the critic's revision replaced the original plan.
    pub adopted: bool,
    pub revision_log: SanitizeLog,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanOutcome {
    pub plan: Plan,
    pub log: SanitizeLog,
    pub critique: Option<CritiqueRound>,
    pub exchanges: Vec<Exchange>,
}

/// Asks the planner, then parses and sanitises its reply.
pub fn initial_plan(
    query: &str,
    catalog: &ToolCatalog,
    gateway: &Gateway,
    templates: &Templates,
) -> Result<PlanOutcome, PlanError> {
    let prompt = build_plan_prompt(query, catalog, templates)?;
    let (completion, exchange) = gateway.exchange(ModelRole::Planner, &prompt)?;
    let parsed = parse_plan(&completion.text)?;
    let (plan, log) = sanitize_plan(&parsed, catalog);
    Ok(PlanOutcome {
        plan,
        log,
        critique: None,
        exchanges: vec![exchange],
    })
}

pub fn build_revise_prompt(
    query: &str,
    plan: &Plan,
    message: &str,
    catalog: &ToolCatalog,
    templates: &Templates,
) -> String {
    render(
        &templates.revise,
        &[
            ("query", query.trim()),
            ("catalog", &catalog.render_prompt()),
            ("plan", &plan.to_text()),
            ("critique", message),
        ],
    )
}

/// One critique round. The revision is adopted only when it parses and
/// survives sanitisation with at least one step.
pub fn critique_plan(
    query: &str,
    outcome: PlanOutcome,
    request: &CritiqueRequest,
    catalog: &ToolCatalog,
    gateway: &Gateway,
    templates: &Templates,
) -> Result<PlanOutcome, PlanError> {
    let message = critique_message(request.kind, request.level, request.detail.as_deref(), templates)?;
    let prompt = build_revise_prompt(query, &outcome.plan, &message, catalog, templates);
    let (completion, exchange) = gateway.exchange(ModelRole::Critic, &prompt)?;
    let mut exchanges = outcome.exchanges;
    exchanges.push(exchange);

    let revision = parse_plan(&completion.text)
        .ok()
        .map(|p| sanitize_plan(&p, catalog))
        .filter(|(p, _)| !p.is_empty());
    Ok(match revision {
        Some((plan, revision_log)) => PlanOutcome {
            plan,
            log: outcome.log,
            critique: Some(CritiqueRound {
                message,
                adopted: true,
                revision_log,
            }),
            exchanges,
        },
        None => PlanOutcome {
            critique: Some(CritiqueRound {
                message,
                adopted: false,
                revision_log: SanitizeLog::default(),
            }),
            exchanges,
            ..outcome
        },
    })
}

/// Planner call, parse, sanitise, and at most one critique round.
pub fn make_plan(
    query: &str,
    catalog: &ToolCatalog,
    gateway: &Gateway,
    templates: &Templates,
    critique: Option<&CritiqueRequest>,
) -> Result<PlanOutcome, PlanError> {
    let outcome = initial_plan(query, catalog, gateway, templates)?;
    match critique {
        None => Ok(outcome),
        Some(request) => critique_plan(query, outcome, request, catalog, gateway, templates),
    }
}
