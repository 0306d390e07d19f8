//! Generated evaluation suites: polluted plans for critique, and JSON field
//! selection tasks.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::info;

use crate::catalog::ToolCatalog;
use crate::eval::dataset::GoldenCase;
use crate::jsonpath::JsonPath;
use crate::planner::{critique_message, CritiqueLevel, Plan, PlanError, PlanStep};
use crate::rag::{RagError, RagTask};
use crate::templates::Templates;
use crate::text::fold_name;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PollutionKind {
    Ordering,
    MissingStep,
    AddedStep,
    AddedMultipleSteps,
}

impl PollutionKind {
    pub const ALL: [PollutionKind; 4] = [
        PollutionKind::Ordering,
        PollutionKind::MissingStep,
        PollutionKind::AddedStep,
        PollutionKind::AddedMultipleSteps,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PollutionKind::Ordering => "ordering",
            PollutionKind::MissingStep => "missing_step",
            PollutionKind::AddedStep => "added_step",
            PollutionKind::AddedMultipleSteps => "added_multiple_steps",
        }
    }
}

impl fmt::Display for PollutionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PollutionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown pollution kind '{s}'"))
    }
}

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("plan too short for {0} pollution")]
    TooShort(PollutionKind),
    #[error("catalog has no tools outside the golden plan")]
    NoSpareTools,
    #[error("detail '{0}' cannot be applied to this plan")]
    InconsistentDetail(String),
    #[error("required path '{path}' does not exist in document '{id}'")]
    InvalidPath { id: String, path: String },
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Rag(#[from] RagError),
}

fn names(plan: &Plan) -> Vec<String> {
    plan.steps().iter().map(|s| fold_name(&s.tool_name)).collect()
}

fn spare_tools<'a>(golden: &Plan, catalog: &'a ToolCatalog) -> Vec<&'a str> {
    let used = names(golden);
    catalog
        .tools()
        .iter()
        .filter(|t| !used.contains(&fold_name(&t.name)))
        .map(|t| t.name.as_str())
        .collect()
}

fn rebuild(steps: Vec<PlanStep>) -> Plan {
    Plan::from_steps(steps.into_iter().map(|s| (s.tool_name, s.intent)))
}

fn bare_step(tool: &str) -> PlanStep {
    PlanStep {
        index: 0,
        tool_name: tool.to_string(),
        intent: String::new(),
    }
}

/// Seeded corruption of a golden plan. The result always differs from the
/// golden tool sequence and is never empty.
pub fn pollute(golden: &Plan, kind: PollutionKind, catalog: &ToolCatalog, seed: u64) -> Result<Plan, ForgeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = golden.steps().to_vec();
    match kind {
        PollutionKind::Ordering => {
            let original = names(golden);
            if original.iter().all(|n| *n == original[0]) {
                // Covers plans of length 0 and 1 as well.
                return Err(ForgeError::TooShort(kind));
            }
            loop {
                steps.shuffle(&mut rng);
                if steps
                    .iter()
                    .map(|s| fold_name(&s.tool_name))
                    .ne(original.iter().cloned())
                {
                    break;
                }
            }
        }
        PollutionKind::MissingStep => {
            if steps.len() < 2 {
                return Err(ForgeError::TooShort(kind));
            }
            let at = rng.random_range(0..steps.len());
            steps.remove(at);
        }
        PollutionKind::AddedStep | PollutionKind::AddedMultipleSteps => {
            if steps.is_empty() {
                return Err(ForgeError::TooShort(kind));
            }
            let spares = spare_tools(golden, catalog);
            if spares.is_empty() {
                return Err(ForgeError::NoSpareTools);
            }
            let count = match kind {
                PollutionKind::AddedStep => 1,
                _ => rng.random_range(2..=3),
            };
            for _ in 0..count {
                let tool = spares[rng.random_range(0..spares.len())];
                let at = rng.random_range(0..=steps.len());
                steps.insert(at, bare_step(tool));
            }
        }
    }
    Ok(rebuild(steps))
}

fn join_indices(indices: &[usize]) -> String {
    match indices {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!(
            "{} and {last}",
            init.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
        ),
    }
}

/// Swaps that turn `current` into `target` (selection order, 1-based).
fn ordering_swaps(mut current: Vec<String>, target: &[String]) -> Option<Vec<(usize, usize)>> {
    let mut swaps = Vec::new();
    for i in 0..target.len() {
        if current[i] != target[i] {
            let j = (i + 1..current.len()).find(|&j| current[j] == target[i])?;
            current.swap(i, j);
            swaps.push((i + 1, j + 1));
        }
    }
    Some(swaps)
}

/// Indices of `longer` not used by a greedy embedding of `shorter`, or
/// `None` when `shorter` is not a subsequence of `longer`.
fn extra_indices(longer: &[String], shorter: &[String]) -> Option<Vec<usize>> {
    let mut extra = Vec::new();
    let mut k = 0;
    for (i, name) in longer.iter().enumerate() {
        if k < shorter.len() && *name == shorter[k] {
            k += 1;
        } else {
            extra.push(i + 1);
        }
    }
    (k == shorter.len()).then_some(extra)
}

/// The single edit instruction that turns `polluted` into `golden` for the
/// given pollution kind, if one exists.
pub fn explicit_detail(polluted: &Plan, golden: &Plan, kind: PollutionKind) -> Option<String> {
    let cur = names(polluted);
    let gold = names(golden);
    match kind {
        PollutionKind::Ordering => {
            let mut a = cur.clone();
            let mut b = gold.clone();
            a.sort();
            b.sort();
            if a != b || cur == gold {
                return None;
            }
            let swaps = ordering_swaps(cur, &gold)?;
            Some(
                swaps
                    .iter()
                    .map(|(i, j)| format!("Reorder step {i} and {j}"))
                    .collect::<Vec<_>>()
                    .join("; "),
            )
        }
        PollutionKind::MissingStep => {
            if cur.len() + 1 != gold.len() || cur.is_empty() {
                return None;
            }
            let missing = extra_indices(&gold, &cur)?;
            let at = missing[0];
            let tool = &golden.steps()[at - 1].tool_name;
            if at <= cur.len() {
                Some(format!("Add {tool} before step {at}"))
            } else {
                Some(format!("Add {tool} after step {}", cur.len()))
            }
        }
        PollutionKind::AddedStep | PollutionKind::AddedMultipleSteps => {
            let extra = extra_indices(&cur, &gold)?;
            match (kind, extra.len()) {
                (PollutionKind::AddedStep, 1) => Some(format!("Remove step {}", extra[0])),
                (PollutionKind::AddedMultipleSteps, n) if n >= 2 => {
                    Some(format!("Remove steps {}", join_indices(&extra)))
                }
                _ => None,
            }
        }
    }
}

/// Classifies the difference between a candidate and the golden plan as one
/// pollution kind with its explicit edit, when it is a single kind of error.
pub fn diagnose(polluted: &Plan, golden: &Plan) -> Option<(PollutionKind, String)> {
    PollutionKind::ALL
        .into_iter()
        .find_map(|kind| explicit_detail(polluted, golden, kind).map(|d| (kind, d)))
}

fn detail_regexes() -> &'static [Regex; 4] {
    static RE: OnceLock<[Regex; 4]> = OnceLock::new();
    RE.get_or_init(|| {
        [
            Regex::new(r"^Reorder step (\d+) and (\d+)$").unwrap(),
            Regex::new(r"^Remove step (\d+)$").unwrap(),
            Regex::new(r"^Remove steps ((?:\d+, )*\d+ and \d+)$").unwrap(),
            Regex::new(r"^Add (\S+) (before|after) step (\d+)$").unwrap(),
        ]
    })
}

/// Applies an explicit edit instruction mechanically.
pub fn apply_explicit(polluted: &Plan, kind: PollutionKind, detail: &str) -> Result<Plan, ForgeError> {
    let bad = || ForgeError::InconsistentDetail(detail.to_string());
    let [reorder, remove_one, remove_many, add] = detail_regexes();
    let mut steps = polluted.steps().to_vec();
    let in_range = |i: usize, len: usize| (1..=len).contains(&i);
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
    match kind {
        PollutionKind::Ordering => {
            for clause in detail.split("; ") {
                let c = reorder.captures(clause).ok_or_else(bad)?;
                let (i, j) = (num(&c[1])?, num(&c[2])?);
                if i == j || !in_range(i, steps.len()) || !in_range(j, steps.len()) {
                    return Err(bad());
                }
                steps.swap(i - 1, j - 1);
            }
        }
        PollutionKind::AddedStep => {
            let c = remove_one.captures(detail).ok_or_else(bad)?;
            let i = num(&c[1])?;
            if !in_range(i, steps.len()) || steps.len() < 2 {
                return Err(bad());
            }
            steps.remove(i - 1);
        }
        PollutionKind::AddedMultipleSteps => {
            let c = remove_many.captures(detail).ok_or_else(bad)?;
            let mut indices = c[1]
                .split(", ")
                .flat_map(|part| part.split(" and "))
                .map(num)
                .collect::<Result<Vec<_>, _>>()?;
            indices.sort_unstable();
            indices.dedup();
            if indices.len() < 2 || indices.len() >= steps.len() || !indices.iter().all(|&i| in_range(i, steps.len())) {
                return Err(bad());
            }
            for i in indices.into_iter().rev() {
                steps.remove(i - 1);
            }
        }
        PollutionKind::MissingStep => {
            let c = add.captures(detail).ok_or_else(bad)?;
            let i = num(&c[3])?;
            if !in_range(i, steps.len()) {
                return Err(bad());
            }
            let at = if &c[2] == "before" { i - 1 } else { i };
            steps.insert(at, bare_step(&c[1]));
        }
    }
    Ok(rebuild(steps))
}

/// Whether two plans have the same tool sequence (case-folded).
pub fn same_tools(a: &Plan, b: &Plan) -> bool {
    names(a) == names(b)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CritiqueTask {
    pub case_id: String,
    pub query: String,
    pub golden: Plan,
    pub polluted: Plan,
    pub kind: PollutionKind,
    pub level: CritiqueLevel,
    pub message: String,
    /// The explicit edit, recorded for every level so that any task can be
    /// checked with [`apply_explicit`].
    pub detail: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedVariant {
    pub case_id: String,
    pub kind: PollutionKind,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CritiqueSuite {
    pub tasks: Vec<CritiqueTask>,
    pub skipped: Vec<SkippedVariant>,
}

/// One polluted variant per (case, kind, seed) and one task per critique
/// level. The pollution seed of case `i` under base seed `s` is `s + i`.
pub fn make_critique_suite(
    cases: &[GoldenCase],
    catalog: &ToolCatalog,
    seeds: &[u64],
    templates: &Templates,
) -> Result<CritiqueSuite, ForgeError> {
    let mut suite = CritiqueSuite::default();
    for &base in seeds {
        for (i, case) in cases.iter().enumerate() {
            let seed = base.wrapping_add(i as u64);
            for kind in PollutionKind::ALL {
                let polluted = match pollute(&case.golden_plan, kind, catalog, seed) {
                    Ok(p) => p,
                    Err(e) => {
                        info!(case = %case.id, %kind, seed, "skipping variant: {e}");
                        suite.skipped.push(SkippedVariant {
                            case_id: case.id.clone(),
                            kind,
                            seed,
                            reason: e.to_string(),
                        });
                        continue;
                    }
                };
                let detail = explicit_detail(&polluted, &case.golden_plan, kind)
                    .ok_or_else(|| ForgeError::InconsistentDetail(polluted.to_text()))?;
                for level in CritiqueLevel::ALL {
                    let message = critique_message(Some(kind), level, Some(&detail), templates)?;
                    suite.tasks.push(CritiqueTask {
                        case_id: case.id.clone(),
                        query: case.query.clone(),
                        golden: case.golden_plan.clone(),
                        polluted: polluted.clone(),
                        kind,
                        level,
                        message,
                        detail: detail.clone(),
                        seed,
                    });
                }
            }
        }
    }
    Ok(suite)
}

fn default_budget() -> usize {
    crate::gateway::Budgets::default().rag_char_budget
}

/// Input record for [`make_jsonrag_suite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagDocument {
    pub id: String,
    pub instruction: String,
    pub document: Value,
    pub required: Vec<JsonPath>,
    #[serde(default = "default_budget")]
    pub budget_chars: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagSuiteEntry {
    pub id: String,
    pub task: RagTask,
    /// Required paths in document order.
    pub expected: Vec<JsonPath>,
}

pub fn make_jsonrag_suite(documents: &[RagDocument]) -> Result<Vec<RagSuiteEntry>, ForgeError> {
    documents
        .iter()
        .map(|d| {
            let mut keyed = Vec::with_capacity(d.required.len());
            for path in &d.required {
                let pos = path
                    .document_position(&d.document)
                    .ok_or_else(|| ForgeError::InvalidPath {
                        id: d.id.clone(),
                        path: path.to_string(),
                    })?;
                keyed.push((pos, path.clone()));
            }
            keyed.sort();
            keyed.dedup();
            Ok(RagSuiteEntry {
                id: d.id.clone(),
                task: RagTask::new(d.instruction.clone(), d.document.clone(), d.budget_chars)?,
                expected: keyed.into_iter().map(|(_, p)| p).collect(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use serde_json::json;

    use super::*;
    use crate::catalog::{HttpMethod, Service, Tool};

    fn catalog(names: &[&str]) -> ToolCatalog {
        let service = Service {
            name: "svc".into(),
            description: String::new(),
            base_url: "http://localhost".into(),
            headers: Default::default(),
        };
        let tools = names
            .iter()
            .map(|n| Tool {
                name: n.to_string(),
                service: "svc".into(),
                http_method: HttpMethod::GET,
                path_template: format!("/{n}"),
                description: format!("{n} tool"),
                parameters: vec![],
            })
            .collect();
        ToolCatalog::new(vec![service], tools).unwrap()
    }

    fn tools(plan: &Plan) -> Vec<&str> {
        plan.tool_names()
    }

    #[test]
    fn ordering_two_steps_is_a_swap() {
        let c = catalog(&["a", "b"]);
        for seed in 0..20 {
            let p = pollute(&Plan::from_tools(["a", "b"]), PollutionKind::Ordering, &c, seed).unwrap();
            assert_eq!(tools(&p), ["b", "a"]);
        }
    }

    #[test]
    fn missing_step_needs_two_steps() {
        let c = catalog(&["a", "x"]);
        assert!(matches!(
            pollute(&Plan::from_tools(["a"]), PollutionKind::MissingStep, &c, 0),
            Err(ForgeError::TooShort(PollutionKind::MissingStep))
        ));
        assert!(matches!(
            pollute(&Plan::from_tools(["a", "a"]), PollutionKind::Ordering, &c, 0),
            Err(ForgeError::TooShort(PollutionKind::Ordering))
        ));
    }

    #[test]
    fn added_step_inserts_a_spare() {
        let c = catalog(&["a", "x"]);
        let p = pollute(&Plan::from_tools(["a"]), PollutionKind::AddedStep, &c, 7).unwrap();
        assert!(tools(&p) == ["x", "a"] || tools(&p) == ["a", "x"]);
        let c = catalog(&["a"]);
        assert!(matches!(
            pollute(&Plan::from_tools(["a"]), PollutionKind::AddedStep, &c, 0),
            Err(ForgeError::NoSpareTools)
        ));
    }

    #[test]
    fn explicit_examples() {
        let golden = Plan::from_tools(["a", "b"]);
        assert_eq!(
            explicit_detail(&Plan::from_tools(["b", "a"]), &golden, PollutionKind::Ordering).as_deref(),
            Some("Reorder step 1 and 2")
        );
        assert_eq!(
            tools(
                &apply_explicit(
                    &Plan::from_tools(["b", "a"]),
                    PollutionKind::Ordering,
                    "Reorder step 1 and 2"
                )
                .unwrap()
            ),
            ["a", "b"]
        );
        assert_eq!(
            tools(
                &apply_explicit(
                    &Plan::from_tools(["a", "x", "b"]),
                    PollutionKind::AddedStep,
                    "Remove step 2"
                )
                .unwrap()
            ),
            ["a", "b"]
        );
        assert_eq!(
            tools(
                &apply_explicit(
                    &Plan::from_tools(["x", "a", "y", "b", "z"]),
                    PollutionKind::AddedMultipleSteps,
                    "Remove steps 1, 3 and 5"
                )
                .unwrap()
            ),
            ["a", "b"]
        );
        assert_eq!(
            tools(
                &apply_explicit(
                    &Plan::from_tools(["b"]),
                    PollutionKind::MissingStep,
                    "Add a before step 1"
                )
                .unwrap()
            ),
            ["a", "b"]
        );
        assert_eq!(
            tools(
                &apply_explicit(
                    &Plan::from_tools(["a"]),
                    PollutionKind::MissingStep,
                    "Add b after step 1"
                )
                .unwrap()
            ),
            ["a", "b"]
        );
        for (kind, detail) in [
            (PollutionKind::Ordering, "Reorder step 1 and 5"),
            (PollutionKind::Ordering, "Remove step 1"),
            (PollutionKind::AddedStep, "Remove step 9"),
            (PollutionKind::AddedMultipleSteps, "Remove steps 1 and 1"),
            (PollutionKind::MissingStep, "Add a before step 0"),
        ] {
            assert!(
                matches!(
                    apply_explicit(&Plan::from_tools(["b", "a"]), kind, detail),
                    Err(ForgeError::InconsistentDetail(_))
                ),
                "{detail}"
            );
        }
    }

    #[test]
    fn diagnose_classifies() {
        let golden = Plan::from_tools(["a", "b", "c"]);
        assert_eq!(
            diagnose(&Plan::from_tools(["a", "c"]), &golden).unwrap(),
            (PollutionKind::MissingStep, "Add b before step 2".into())
        );
        assert_eq!(
            diagnose(&Plan::from_tools(["a", "b"]), &golden).unwrap(),
            (PollutionKind::MissingStep, "Add c after step 2".into())
        );
        assert_eq!(
            diagnose(&Plan::from_tools(["a", "x", "b", "c"]), &golden).unwrap().0,
            PollutionKind::AddedStep
        );
        assert_eq!(
            diagnose(&Plan::from_tools(["x", "a", "b", "y", "c"]), &golden).unwrap(),
            (PollutionKind::AddedMultipleSteps, "Remove steps 1 and 4".into())
        );
        assert_eq!(
            diagnose(&Plan::from_tools(["c", "a", "b"]), &golden).unwrap().0,
            PollutionKind::Ordering
        );
        assert!(diagnose(&golden, &golden).is_none());
        assert!(diagnose(&Plan::from_tools(["z"]), &golden).is_none());
    }

    #[test]
    fn jsonrag_suite_validates_paths() {
        let doc = RagDocument {
            id: "country".into(),
            instruction: "name, leader, continent".into(),
            document: json!({"country": {"name": "France", "leader": "X"}, "continent": "Europe"}),
            required: vec!["continent".parse().unwrap(), "country.name".parse().unwrap()],
            budget_chars: 64,
        };
        let suite = make_jsonrag_suite(std::slice::from_ref(&doc)).unwrap();
        assert_eq!(
            suite[0].expected,
            vec![
                "country.name".parse().unwrap(),
                "continent".parse::<JsonPath>().unwrap()
            ]
        );
        assert!(make_jsonrag_suite(&[]).unwrap().is_empty());
        let bad = RagDocument {
            required: vec!["country.capital".parse().unwrap()],
            ..doc
        };
        assert!(matches!(
            make_jsonrag_suite(&[bad]),
            Err(ForgeError::InvalidPath { .. })
        ));
    }

    fn arb_golden() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec(prop_oneof![Just("a"), Just("b"), Just("c"), Just("d")], 1..7)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn pollution_round_trips(golden in arb_golden(), seed in any::<u64>(), k in 0usize..4) {
            let kind = PollutionKind::ALL[k];
            let c = catalog(&["a", "b", "c", "d", "x", "y"]);
            let golden = Plan::from_tools(golden);
            let Ok(polluted) = pollute(&golden, kind, &c, seed) else { return Ok(()) };
            prop_assert!(!same_tools(&polluted, &golden));
            prop_assert!(!polluted.is_empty());
            prop_assert_eq!(&polluted, &pollute(&golden, kind, &c, seed).unwrap());
            match kind {
                PollutionKind::Ordering => {
                    let (mut a, mut b) = (names(&polluted), names(&golden));
                    a.sort();
                    b.sort();
                    prop_assert_eq!(a, b);
                }
                PollutionKind::MissingStep => prop_assert_eq!(polluted.len() + 1, golden.len()),
                PollutionKind::AddedStep => prop_assert_eq!(polluted.len(), golden.len() + 1),
                PollutionKind::AddedMultipleSteps => {
                    prop_assert!((2..=3).contains(&(polluted.len() - golden.len())))
                }
            }
            let detail = explicit_detail(&polluted, &golden, kind).unwrap();
            let fixed = apply_explicit(&polluted, kind, &detail).unwrap();
            prop_assert!(same_tools(&fixed, &golden), "{} -> {}", detail, fixed);
        }
    }
}
