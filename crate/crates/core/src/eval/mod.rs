//! Benchmark metrics and reports.

pub mod cost;
pub mod dataset;
pub mod report;
pub mod rouge;
pub mod slots;
pub mod sts;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::gateway::GatewayError;
use crate::jsonpath::JsonPath;
use crate::planner::Plan;
use crate::text::fold_name;

pub use cost::{cost_report, cost_report_csv, CostRow};
pub use dataset::{load_dataset, parse_dataset, ExpectedResponse, GoldenCase, GoldenParam, MatchMode};
pub use report::{aggregate, render_table, CaseOutcome, ResponseScore, SuiteReport};
pub use rouge::{rouge_l, RougeL};
pub use slots::{eval_slots, ParamCheck, SlotVerdict};
pub use sts::{cosine, cosine_sts};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("golden plan is empty")]
    EmptyGolden,
    #[error("no outcomes to aggregate")]
    EmptyOutcomes,
    #[error("dataset contains no cases")]
    EmptyDataset,
    #[error("embedding is a zero vector")]
    ZeroVector,
    #[error("no parameters for candidate step {0}")]
    MissingStepParams(usize),
    #[error("candidate plan does not end with the golden plan")]
    PlanNotPassed,
    #[error("case '{id}': {detail}")]
    InvalidCase { id: String, detail: String },
    #[error("model '{0}' has no spec")]
    UnknownModel(String),
    #[error("model '{0}' has no parameter count")]
    MissingParamCount(String),
    #[error("invalid outcome: {0}")]
    InvalidOutcome(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn folded(plan: &Plan) -> Vec<String> {
    plan.steps().iter().map(|s| fold_name(&s.tool_name)).collect()
}

/// Passes when the candidate's tool sequence equals the golden one or ends
/// with it. Intents are ignored.
pub fn eval_plan(candidate: &Plan, golden: &Plan) -> Result<bool, EvalError> {
    if golden.is_empty() {
        return Err(EvalError::EmptyGolden);
    }
    Ok(folded(candidate).ends_with(&folded(golden)))
}

/// Exact tool-sequence equality; no suffix leniency.
pub fn eval_critique(corrected: &Plan, golden: &Plan) -> bool {
    folded(corrected) == folded(golden)
}

pub fn procedural(plan_pass: bool, slot_pass: bool) -> bool {
    plan_pass && slot_pass
}

/// Strict selection scoring: the selected set must equal the required set.
pub fn eval_jsonrag(selected: &[JsonPath], required: &[JsonPath]) -> bool {
    selected.iter().collect::<BTreeSet<_>>() == required.iter().collect::<BTreeSet<_>>()
}

/// Lenient selection score: |S ∩ R| / |S ∪ R|, 1.0 when both are empty.
pub fn jaccard_jsonrag(selected: &[JsonPath], required: &[JsonPath]) -> f64 {
    let s: BTreeSet<_> = selected.iter().collect();
    let r: BTreeSet<_> = required.iter().collect();
    let union = s.union(&r).count();
    if union == 0 {
        return 1.0;
    }
    s.intersection(&r).count() as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn plan(names: &[&str]) -> Plan {
        Plan::from_tools(names.iter().copied())
    }

    /// Checks every contiguous suffix of the candidate.
    fn suffix_oracle(candidate: &[String], golden: &[String]) -> bool {
        (0..=candidate.len()).any(|start| candidate[start..] == *golden)
    }

    #[test]
    fn plan_examples() {
        assert!(eval_plan(&plan(&["listCurrencies", "convert"]), &plan(&["convert"])).unwrap());
        assert!(eval_plan(&plan(&["a", "b"]), &plan(&["a", "b"])).unwrap());
        assert!(!eval_plan(&plan(&["b", "a"]), &plan(&["a", "b"])).unwrap());
        assert!(!eval_plan(&plan(&["a"]), &plan(&["a", "b"])).unwrap());
        assert!(eval_plan(&plan(&["A "]), &plan(&["a"])).unwrap());
        assert!(matches!(
            eval_plan(&plan(&["a"]), &plan(&[])),
            Err(EvalError::EmptyGolden)
        ));
    }

    #[test]
    fn critique_examples() {
        assert!(eval_critique(&plan(&["a", "b"]), &plan(&["a", "b"])));
        assert!(!eval_critique(&plan(&["x", "a", "b"]), &plan(&["a", "b"])));
        assert!(!eval_critique(&plan(&["b", "a"]), &plan(&["a", "b"])));
    }

    #[test]
    fn procedural_truth_table() {
        assert!(procedural(true, true));
        assert!(!procedural(true, false));
        assert!(!procedural(false, true));
        assert!(!procedural(false, false));
    }

    #[test]
    fn jsonrag_examples() {
        let p = |s: &str| s.parse::<JsonPath>().unwrap();
        let req = [p("country.name"), p("country.leader"), p("continent")];
        let shuffled = [p("continent"), p("country.name"), p("country.leader")];
        assert!(eval_jsonrag(&shuffled, &req));
        let mut sup = req.to_vec();
        sup.push(p("summary"));
        assert!(!eval_jsonrag(&sup, &req));
        assert!(!eval_jsonrag(&req[..2], &req));
        assert_eq!(jaccard_jsonrag(&req[..2], &req), 2.0 / 3.0);
        assert_eq!(jaccard_jsonrag(&sup, &req), 0.75);
    }

    fn names() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec("[a-d]", 0..6)
    }

    proptest! {
        #[test]
        fn prefix_leniency(prefix in names(), golden in names()) {
            prop_assume!(!golden.is_empty());
            let mut cand = prefix;
            cand.extend(golden.iter().cloned());
            prop_assert!(eval_plan(&Plan::from_tools(cand), &Plan::from_tools(golden.clone())).unwrap());
            prop_assert!(eval_plan(&Plan::from_tools(golden.clone()), &Plan::from_tools(golden)).unwrap());
        }

        #[test]
        fn agrees_with_suffix_oracle(cand in names(), golden in names()) {
            prop_assume!(!golden.is_empty());
            prop_assert_eq!(
                eval_plan(&Plan::from_tools(cand.clone()), &Plan::from_tools(golden.clone())).unwrap(),
                suffix_oracle(&cand, &golden)
            );
        }
    }
}
