//! End-to-end runs: plan, sanitise, optional critique, then per step slot
//! filling, invocation and reduction, then the final response.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::ToolCatalog;
use crate::forge::{diagnose, same_tools};
use crate::gateway::Gateway;
use crate::planner::{
    critique_plan, initial_plan, CritiqueLevel, CritiqueRequest, CritiqueRound, Plan, PlanError, PlanOutcome,
    SanitizeLog,
};
use crate::rag::{reduce, RagTask};
use crate::response::{form_response, FinalResponse};
use crate::runtime::{invoke, prepare_request, InvocationMode, ToolCall};
use crate::slots::{fill_slots, ContextStore, ParamMap};
use crate::templates::Templates;
use crate::trace::{ExecutionTrace, TraceRecord};

/// Where critique feedback comes from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum CritiqueSource {
    #[default]
    None,
    Fixed(CritiqueRequest),
    /// Feedback derived from the golden plan, as in the critique study.
    /// Skipped when the plan already matches; falls back to general feedback
    /// when the difference is not a single pollution kind.
    Oracle {
        golden: Plan,
        level: CritiqueLevel,
    },
}

impl CritiqueSource {
    fn request_for(&self, plan: &Plan) -> Option<CritiqueRequest> {
        match self {
            CritiqueSource::None => None,
            CritiqueSource::Fixed(r) => Some(r.clone()),
            CritiqueSource::Oracle { golden, level } => {
                if same_tools(plan, golden) {
                    return None;
                }
                Some(match (diagnose(plan, golden), level) {
                    (Some((kind, detail)), CritiqueLevel::Assisted | CritiqueLevel::Explicit) => CritiqueRequest {
                        level: *level,
                        kind: Some(kind),
                        detail: Some(detail),
                    },
                    _ => CritiqueRequest::general(),
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Plan,
    SlotFill,
    Invoke,
    Reduce,
    Context,
    Response,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunError {
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.step {
            Some(step) => write!(f, "{:?} failed at step {step}: {}", self.stage, self.message),
            None => write!(f, "{:?} failed: {}", self.stage, self.message),
        }
    }
}

/// Everything a run produced, including partial results when it failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub query: String,
    pub plan: Option<Plan>,
    pub sanitize: SanitizeLog,
    pub critique: Option<CritiqueRound>,
    /// Filled parameters keyed by plan step.
    pub params: BTreeMap<usize, ParamMap>,
    pub response: Option<FinalResponse>,
    pub trace: ExecutionTrace,
    pub error: Option<RunError>,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

/// Shared, read-only run context. Safe to use from many threads at once.
#[derive(Debug)]
pub struct Engine {
    pub catalog: Arc<ToolCatalog>,
    pub gateway: Gateway,
    pub templates: Templates,
    pub tools: InvocationMode,
    pub preview_len: usize,
}

impl Engine {
    pub fn run(&self, query: &str, critique: &CritiqueSource) -> RunRecord {
        let mut record = RunRecord {
            query: query.to_string(),
            plan: None,
            sanitize: SanitizeLog::default(),
            critique: None,
            params: BTreeMap::new(),
            response: None,
            trace: ExecutionTrace::new(),
            error: None,
        };
        let plan = match self.plan(query, critique) {
            Ok(outcome) => {
                record.trace.push(TraceRecord::Plan {
                    exchanges: outcome.exchanges,
                    plan: Some(outcome.plan.clone()),
                    sanitize: outcome.log.clone(),
                    critique: outcome.critique.clone(),
                    error: None,
                });
                record.sanitize = outcome.log;
                record.critique = outcome.critique;
                record.plan = Some(outcome.plan.clone());
                outcome.plan
            }
            Err(e) => {
                record.trace.push(TraceRecord::Plan {
                    exchanges: vec![],
                    plan: None,
                    sanitize: SanitizeLog::default(),
                    critique: None,
                    error: Some(e.to_string()),
                });
                record.error = Some(RunError {
                    stage: Stage::Plan,
                    step: None,
                    message: e.to_string(),
                });
                return record;
            }
        };
        if plan.is_empty() {
            record.error = Some(RunError {
                stage: Stage::Plan,
                step: None,
                message: "sanitisation removed every step".into(),
            });
            return record;
        }

        let mut ctx = ContextStore::new();
        for step in plan.steps() {
            if let Err(error) = self.run_step(query, step, &mut ctx, &mut record) {
                record.error = Some(error);
                return record;
            }
        }

        match form_response(query, &ctx, &self.gateway, &self.templates) {
            Ok((response, exchange)) => {
                record.trace.push(TraceRecord::Response {
                    exchanges: vec![exchange],
                    text: Some(response.text.clone()),
                    error: None,
                });
                record.response = Some(response);
            }
            Err(e) => {
                record.trace.push(TraceRecord::Response {
                    exchanges: vec![],
                    text: None,
                    error: Some(e.to_string()),
                });
                record.error = Some(RunError {
                    stage: Stage::Response,
                    step: None,
                    message: e.to_string(),
                });
            }
        }
        record
    }

    fn plan(&self, query: &str, critique: &CritiqueSource) -> Result<PlanOutcome, PlanError> {
        let outcome = initial_plan(query, &self.catalog, &self.gateway, &self.templates)?;
        match critique.request_for(&outcome.plan) {
            None => Ok(outcome),
            Some(request) => critique_plan(query, outcome, &request, &self.catalog, &self.gateway, &self.templates),
        }
    }

    fn run_step(
        &self,
        query: &str,
        step: &crate::planner::PlanStep,
        ctx: &mut ContextStore,
        record: &mut RunRecord,
    ) -> Result<(), RunError> {
        let fail = |stage, message: String| RunError {
            stage,
            step: Some(step.index),
            message,
        };
        let mut entry = StepTrace {
            step: step.index,
            tool: step.tool_name.clone(),
            ..StepTrace::default()
        };
        let result = (|| {
            let tool = self.catalog.lookup(&step.tool_name).ok_or_else(|| {
                fail(
                    Stage::SlotFill,
                    format!("tool '{}' is not in the catalog", step.tool_name),
                )
            })?;
            let fill = fill_slots(step, tool, query, ctx, &self.gateway, &self.templates).map_err(|e| {
                entry.exchanges.extend(e.exchanges.iter().cloned());
                fail(Stage::SlotFill, e.to_string())
            })?;
            entry.exchanges.extend(fill.exchanges);
            entry.params = Some(fill.params.clone());
            record.params.insert(step.index, fill.params.clone());

            let call = ToolCall {
                tool: tool.clone(),
                params: fill.params,
            };
            entry.request = prepare_request(&call).ok();
            let result = invoke(&call, self.catalog.service(&tool.service), &self.tools)
                .map_err(|e| fail(Stage::Invoke, e.to_string()))?;
            entry.result = Some(result.clone());

            let instruction = if step.intent.is_empty() {
                query.trim().to_string()
            } else {
                format!("{} ({})", query.trim(), step.intent)
            };
            let budget = self.gateway.config().budgets.rag_char_budget;
            let task =
                RagTask::new(instruction, result.body, budget).map_err(|e| fail(Stage::Reduce, e.to_string()))?;
            let reduction = reduce(&task, &self.gateway, &self.templates, self.preview_len)
                .map_err(|e| fail(Stage::Reduce, e.to_string()))?;
            if let Some(selection) = reduction.selection {
                entry.exchanges.push(selection.exchange);
                entry.selected_paths = Some(selection.paths);
            }
            entry.reduced = Some(reduction.value.clone());
            ctx.push(step.index, &tool.name, reduction.value, budget)
                .map_err(|e| fail(Stage::Context, e.to_string()))
        })();
        entry.error = result.as_ref().err().map(|e| e.message.clone());
        record.trace.push(entry.into_record());
        result
    }
}

#[derive(Default)]
struct StepTrace {
    step: usize,
    tool: String,
    exchanges: Vec<crate::gateway::Exchange>,
    params: Option<ParamMap>,
    request: Option<crate::runtime::PreparedRequest>,
    result: Option<crate::runtime::ToolResult>,
    selected_paths: Option<Vec<crate::jsonpath::JsonPath>>,
    reduced: Option<serde_json::Value>,
    error: Option<String>,
}

impl StepTrace {
    fn into_record(self) -> TraceRecord {
        TraceRecord::Step {
            step: self.step,
            tool: self.tool,
            exchanges: self.exchanges,
            params: self.params,
            request: self.request,
            result: self.result,
            selected_paths: self.selected_paths,
            reduced: self.reduced,
            error: self.error,
        }
    }
}
