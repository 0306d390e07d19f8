//! Benchmark execution: golden cases through the pipeline, generated suites
//! through single roles, and scripted fixture recording.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::catalog::ToolCatalog;
use crate::eval::report::{aggregate, render_table, CaseOutcome, ResponseScore, SuiteReport};
use crate::eval::{cosine_sts, eval_critique, eval_jsonrag, eval_plan, eval_slots, rouge_l, EvalError, GoldenCase};
use crate::forge::{CritiqueTask, RagSuiteEntry};
use crate::gateway::{
    BackendSpec, BoundBackend, CoalitionConfig, FixtureEntry, Gateway, GatewayError, ModelRegistry, ModelRole,
    ModelSpec, ScriptedBackend,
};
use crate::pipeline::{CritiqueSource, Engine, RunRecord};
use crate::planner::{build_revise_prompt, parse_plan, sanitize_plan, CritiqueLevel, Plan};
use crate::rag::{build_select_prompt, select_paths, RagError};
use crate::runtime::{FixtureSet, InvocationMode};
use crate::templates::Templates;
use crate::trace::TraceRecord;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
    #[error("recording case '{id}': {detail}")]
    Record { id: String, detail: String },
}

fn response_score(candidate: &str, reference: &str, gateway: &Gateway) -> Result<ResponseScore, EvalError> {
    let rl = rouge_l(candidate, reference);
    let cos = match cosine_sts(candidate, reference, gateway) {
        Ok(c) => c,
        // Text with no embeddable content scores zero rather than aborting.
        Err(EvalError::ZeroVector) | Err(EvalError::Gateway(GatewayError::EmptyText)) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(ResponseScore {
        cos,
        rl_pre: rl.pre,
        rl_rec: rl.rec,
        rl_f: rl.f,
    })
}

/// Scores one run against its golden case.
pub fn evaluate_case(case: &GoldenCase, record: &RunRecord, gateway: &Gateway) -> Result<CaseOutcome, EvalError> {
    let plan_pass = match &record.plan {
        Some(plan) => eval_plan(plan, &case.golden_plan)?,
        None => false,
    };
    let slot_pass = match &record.plan {
        Some(plan) => match eval_slots(
            plan,
            &record.params,
            case,
            gateway,
            gateway.config().thresholds.sts_pass,
        ) {
            Ok(verdict) => verdict.pass,
            Err(EvalError::MissingStepParams(_) | EvalError::PlanNotPassed) => false,
            Err(e) => return Err(e),
        },
        None => false,
    };
    let Some(response) = &record.response else {
        let error = record
            .error
            .as_ref()
            .map_or_else(|| "no response".to_string(), ToString::to_string);
        let mut outcome = CaseOutcome::new(&case.id, plan_pass, slot_pass, ResponseScore::default())?;
        outcome.error = Some(error);
        return Ok(outcome);
    };
    let score = response_score(&response.text, &case.expected_response.joined(), gateway)?;
    let mut outcome = CaseOutcome::new(&case.id, plan_pass, slot_pass, score)?;
    let snippets = case.expected_response.snippets();
    if snippets.len() > 1 {
        outcome.snippets = snippets
            .iter()
            .map(|s| response_score(&response.text, s, gateway))
            .collect::<Result<_, _>>()?;
    }
    outcome.error = record.error.as_ref().map(ToString::to_string);
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    /// Sorted by case id.
    pub outcomes: Vec<CaseOutcome>,
    pub report: SuiteReport,
    /// Run records in the same order as `outcomes`.
    pub records: Vec<RunRecord>,
}

/// Runs every case on a pool of `jobs` threads. With `critique`, each plan
/// gets oracle feedback at that level.
pub fn run_bench(
    engine: &Engine,
    cases: &[GoldenCase],
    critique: Option<CritiqueLevel>,
    jobs: usize,
) -> Result<BenchRun, BenchError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| BenchError::Pool(e.to_string()))?;
    let mut results = pool.install(|| {
        cases
            .par_iter()
            .map(|case| {
                let source = match critique {
                    None => CritiqueSource::None,
                    Some(level) => CritiqueSource::Oracle {
                        golden: case.golden_plan.clone(),
                        level,
                    },
                };
                let record = engine.run(&case.query, &source);
                evaluate_case(case, &record, &engine.gateway).map(|o| (o, record))
            })
            .collect::<Result<Vec<_>, EvalError>>()
    })?;
    results.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    let (outcomes, records): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let report = aggregate(&outcomes)?;
    Ok(BenchRun {
        outcomes,
        report,
        records,
    })
}

pub fn report_json(report: &SuiteReport) -> String {
    serde_json::to_string_pretty(report).expect("report serialises") + "\n"
}

pub fn outcomes_json(outcomes: &[CaseOutcome]) -> String {
    serde_json::to_string_pretty(outcomes).expect("outcomes serialise") + "\n"
}

/// Writes `report.json`, `report.txt`, `outcomes.json` and one trace file
/// per case under `traces/`.
pub fn write_bench_outputs(run: &BenchRun, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir.join("traces"))?;
    fs::write(dir.join("report.json"), report_json(&run.report))?;
    fs::write(dir.join("report.txt"), render_table(&run.report))?;
    fs::write(dir.join("outcomes.json"), outcomes_json(&run.outcomes))?;
    for (outcome, record) in run.outcomes.iter().zip(&run.records) {
        let name: String = outcome
            .id
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        record
            .trace
            .write_file(&dir.join("traces").join(format!("{name}.jsonl")))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub passed: usize,
    pub total: usize,
}

impl Tally {
    fn add(&mut self, pass: bool) {
        self.total += 1;
        self.passed += usize::from(pass);
    }

    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.passed as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub overall: Tally,
    pub success_rate: f64,
    /// Per pollution kind and critique level (critique suites) or per
    /// document id (JSON suites).
    pub groups: BTreeMap<String, Tally>,
    pub verdicts: Vec<TaskVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskVerdict {
    pub id: String,
    pub pass: bool,
    pub output: String,
}

fn finish(verdicts: Vec<(String, TaskVerdict)>) -> SuiteResult {
    let mut overall = Tally::default();
    let mut groups: BTreeMap<String, Tally> = BTreeMap::new();
    for (group, v) in &verdicts {
        overall.add(v.pass);
        groups.entry(group.clone()).or_default().add(v.pass);
    }
    SuiteResult {
        success_rate: overall.rate(),
        overall,
        groups,
        verdicts: verdicts.into_iter().map(|(_, v)| v).collect(),
    }
}

/// Sends each polluted plan with its critique to the Critic and checks the
/// revision against the golden plan.
pub fn run_critique_suite(
    tasks: &[CritiqueTask],
    catalog: &ToolCatalog,
    gateway: &Gateway,
    templates: &Templates,
) -> Result<SuiteResult, BenchError> {
    let mut verdicts = Vec::with_capacity(tasks.len());
    for (i, task) in tasks.iter().enumerate() {
        let prompt = build_revise_prompt(&task.query, &task.polluted, &task.message, catalog, templates);
        let reply = gateway.complete(ModelRole::Critic, &prompt)?.text;
        let pass = parse_plan(&reply)
            .map(|p| eval_critique(&sanitize_plan(&p, catalog).0, &task.golden))
            .unwrap_or(false);
        verdicts.push((
            format!("{}/{}", task.kind, task.level),
            TaskVerdict {
                id: format!("{}#{i}", task.case_id),
                pass,
                output: reply,
            },
        ));
    }
    Ok(finish(verdicts))
}

/// Asks the JsonRag role for each task's paths and scores the selection.
pub fn run_jsonrag_suite(
    entries: &[RagSuiteEntry],
    gateway: &Gateway,
    templates: &Templates,
    preview_len: usize,
) -> Result<SuiteResult, BenchError> {
    let mut verdicts = Vec::with_capacity(entries.len());
    for entry in entries {
        let (pass, output) = match select_paths(&entry.task, gateway, templates, preview_len) {
            Ok(sel) => (
                eval_jsonrag(&sel.paths, &entry.expected),
                sel.paths.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"),
            ),
            Err(RagError::NoValidPaths) => (false, String::new()),
            Err(RagError::Gateway(e)) => return Err(e.into()),
            Err(e) => (false, e.to_string()),
        };
        verdicts.push((
            entry.id.clone(),
            TaskVerdict {
                id: entry.id.clone(),
                pass,
                output,
            },
        ));
    }
    Ok(finish(verdicts))
}

/// Scripted replies for one case beyond what the golden case determines.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CaseScript {
    /// ResponseFormer reply; defaults to the expected response.
    #[serde(default)]
    pub response: Option<String>,
    /// JsonRag reply per golden step, for results over budget.
    #[serde(default)]
    pub rag: BTreeMap<usize, String>,
    /// Extra parameter values per golden step, merged over the golden ones.
    #[serde(default)]
    pub params: BTreeMap<usize, BTreeMap<String, Value>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanVariant {
    /// The golden plan verbatim.
    Golden,
    /// An extra step naming a tool far from every catalog name, placed first.
    Hallucinated,
    /// The first step's tool name misspelt by one edit.
    Typo,
}

/// Name used for injected out-of-catalog steps.
pub const HALLUCINATED_TOOL: &str = "fetchQuantumHoroscope";

/// Planner reply text for a variant of the golden plan.
pub fn variant_plan_text(golden: &Plan, variant: PlanVariant, catalog: &ToolCatalog) -> Result<String, String> {
    let mut steps: Vec<(String, String)> = golden
        .steps()
        .iter()
        .map(|s| (s.tool_name.clone(), s.intent.clone()))
        .collect();
    match variant {
        PlanVariant::Golden => {}
        PlanVariant::Hallucinated => {
            if catalog.nearest_tool(HALLUCINATED_TOOL).is_some() {
                return Err(format!(
                    "'{HALLUCINATED_TOOL}' is within replacement distance of a catalog tool"
                ));
            }
            steps.insert(0, (HALLUCINATED_TOOL.to_string(), "look up extra context".to_string()));
        }
        PlanVariant::Typo => {
            let original = steps[0].0.clone();
            let chars: Vec<char> = original.chars().collect();
            let candidates = (0..chars.len()).rev().map(|i| {
                let mut c = chars.clone();
                c.remove(i);
                c.into_iter().collect::<String>()
            });
            let typo = candidates
                .filter(|t| !t.is_empty() && catalog.lookup(t).is_none())
                .find(|t| catalog.nearest_tool(t).is_some_and(|(tool, _)| tool.name == original))
                .ok_or_else(|| format!("no unambiguous typo for '{original}'"))?;
            steps[0].0 = typo;
        }
    }
    Ok(Plan::from_steps(steps).to_text())
}

/// Everything needed to record fixtures for a case set.
pub struct Recorder<'a> {
    pub catalog: Arc<ToolCatalog>,
    pub tools: &'a FixtureSet,
    pub templates: &'a Templates,
    pub coalition: &'a CoalitionConfig,
    pub preview_len: usize,
}

impl Recorder<'_> {
    /// Runs each case against a queue-scripted backend holding the golden
    /// replies and returns the exchanges as prompt-keyed fixture entries.
    pub fn record(
        &self,
        cases: &[GoldenCase],
        scripts: &BTreeMap<String, CaseScript>,
        variant: PlanVariant,
    ) -> Result<Vec<FixtureEntry>, BenchError> {
        let mut entries = Vec::new();
        for case in cases {
            let err = |detail: String| BenchError::Record {
                id: case.id.clone(),
                detail,
            };
            let script = scripts.get(&case.id).cloned().unwrap_or_default();
            let mut queue = vec![FixtureEntry::queued(
                ModelRole::Planner,
                variant_plan_text(&case.golden_plan, variant, &self.catalog).map_err(err)?,
            )];
            for step in 1..=case.golden_plan.len() {
                let mut params: serde_json::Map<String, Value> = case
                    .golden_params
                    .get(&step)
                    .map(|p| p.iter().map(|(k, v)| (k.clone(), v.value.clone())).collect())
                    .unwrap_or_default();
                if let Some(extra) = script.params.get(&step) {
                    params.extend(extra.iter().map(|(k, v)| (k.clone(), v.clone())));
                }
                queue.push(FixtureEntry::queued(
                    ModelRole::SlotFiller,
                    Value::Object(params).to_string(),
                ));
            }
            queue.extend(
                script
                    .rag
                    .values()
                    .map(|t| FixtureEntry::queued(ModelRole::JsonRag, t.clone())),
            );
            queue.push(FixtureEntry::queued(
                ModelRole::ResponseFormer,
                script
                    .response
                    .clone()
                    .unwrap_or_else(|| case.expected_response.joined()),
            ));

            let mut registry = ModelRegistry::new();
            registry.register(
                ModelSpec::new("recorder", BackendSpec::TemplateEcho),
                BoundBackend::Chat(Arc::new(ScriptedBackend::from_entries(queue))),
            )?;
            let mut config = CoalitionConfig::single_model("recorder");
            config.budgets = self.coalition.budgets;
            let engine = Engine {
                catalog: Arc::clone(&self.catalog),
                gateway: Gateway::new(Arc::new(registry), config)?,
                templates: self.templates.clone(),
                tools: InvocationMode::Simulated(self.tools.clone()),
                preview_len: self.preview_len,
            };
            let record = engine.run(&case.query, &CritiqueSource::None);
            if let Some(e) = &record.error {
                return Err(err(e.to_string()));
            }
            for r in record.trace.records() {
                let exchanges = match r {
                    TraceRecord::Plan { exchanges, .. }
                    | TraceRecord::Step { exchanges, .. }
                    | TraceRecord::Response { exchanges, .. } => exchanges,
                };
                entries.extend(exchanges.iter().map(|x| FixtureEntry {
                    role: x.role,
                    prompt_sha256: Some(x.prompt_sha256.clone()),
                    text: x.completion.clone(),
                }));
            }
        }
        Ok(entries)
    }
}

/// Critic replies that restore each task's golden plan, keyed by the revise
/// prompt the suite runner will send.
pub fn golden_critique_fixtures(
    tasks: &[CritiqueTask],
    catalog: &ToolCatalog,
    templates: &Templates,
) -> Vec<FixtureEntry> {
    tasks
        .iter()
        .map(|t| {
            let prompt = build_revise_prompt(&t.query, &t.polluted, &t.message, catalog, templates);
            FixtureEntry::keyed(ModelRole::Critic, &prompt, t.golden.to_text())
        })
        .collect()
}

/// JsonRag replies naming each entry's expected paths, one per line.
pub fn golden_jsonrag_fixtures(
    entries: &[RagSuiteEntry],
    templates: &Templates,
    preview_len: usize,
) -> Result<Vec<FixtureEntry>, RagError> {
    entries
        .iter()
        .map(|e| {
            let prompt = build_select_prompt(&e.task, preview_len, templates)?;
            let reply = e
                .expected
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("\n");
            Ok(FixtureEntry::keyed(ModelRole::JsonRag, &prompt, reply))
        })
        .collect()
}

/// Drops keyed entries whose (role, prompt) was already seen, keeping the
/// first, which is the one a scripted backend would answer with.
pub fn dedup_fixtures(entries: Vec<FixtureEntry>) -> Vec<FixtureEntry> {
    let mut seen = std::collections::HashSet::new();
    entries
        .into_iter()
        .filter(|e| match &e.prompt_sha256 {
            Some(h) => seen.insert((e.role, h.clone())),
            None => true,
        })
        .collect()
}
