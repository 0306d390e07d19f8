//! Slot-filling verdicts against golden parameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gateway::Gateway;
use crate::planner::Plan;
use crate::slots::{ParamMap, ParamValue};
use crate::text::fold_name;

use super::dataset::{GoldenCase, MatchMode};
use super::sts::cosine_sts;
use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    /// Golden step index (1-based).
    pub step: usize,
    pub name: String,
    pub mode: MatchMode,
    pub expected: Value,
    pub actual: Option<ParamValue>,
    /// Similarity for semantic parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotVerdict {
    pub pass: bool,
    pub checks: Vec<ParamCheck>,
}

fn golden_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Numbers compare numerically; everything else as trimmed text.
pub fn exact_match(actual: &ParamValue, expected: &Value) -> bool {
    if let (Some(a), Some(e)) = (actual.as_f64(), expected.as_f64()) {
        return a == e;
    }
    let expected = golden_text(expected);
    if let (Some(a), Ok(e)) = (actual.as_f64(), expected.trim().parse::<f64>()) {
        return a == e;
    }
    if let (ParamValue::String(a), Some(e)) = (actual, expected_number(&expected)) {
        if let Ok(a) = a.trim().parse::<f64>() {
            return a == e;
        }
    }
    actual.to_string().trim() == expected.trim()
}

fn expected_number(text: &str) -> Option<f64> {
    text.trim().parse().ok()
}

/// Checks every golden parameter. Golden step `i` is aligned with candidate
/// step `len(candidate) - len(golden) + i`; `actual` is keyed by candidate
/// step. An aligned step that calls a different tool fails all of its
/// parameters. A candidate shorter than the golden plan is not evaluated.
pub fn eval_slots(
    candidate: &Plan,
    actual: &BTreeMap<usize, ParamMap>,
    case: &GoldenCase,
    gateway: &Gateway,
    sts_pass: f64,
) -> Result<SlotVerdict, EvalError> {
    let golden = case.golden_plan.steps();
    let offset = candidate
        .len()
        .checked_sub(golden.len())
        .ok_or(EvalError::PlanNotPassed)?;
    let mut checks = Vec::new();
    for (&step, params) in &case.golden_params {
        let Some(golden_step) = step.checked_sub(1).and_then(|i| golden.get(i)) else {
            return Err(EvalError::InvalidCase {
                id: case.id.clone(),
                detail: format!("golden params reference step {step} outside the plan"),
            });
        };
        let candidate_step = offset + step;
        let same_tool =
            fold_name(&candidate.steps()[candidate_step - 1].tool_name) == fold_name(&golden_step.tool_name);
        let got = if same_tool {
            Some(
                actual
                    .get(&candidate_step)
                    .ok_or(EvalError::MissingStepParams(candidate_step))?,
            )
        } else {
            None
        };
        for (name, golden) in params {
            let value = got.and_then(|g| g.get(name)).cloned();
            let (pass, score) = match (&value, golden.mode) {
                (None, _) => (false, None),
                (Some(v), MatchMode::Exact) => (exact_match(v, &golden.value), None),
                (Some(v), MatchMode::Semantic) => {
                    let score = cosine_sts(&v.to_string(), &golden_text(&golden.value), gateway)?;
                    (score >= sts_pass, Some(score))
                }
            };
            checks.push(ParamCheck {
                step,
                name: name.clone(),
                mode: golden.mode,
                expected: golden.value.clone(),
                actual: value,
                score,
                pass,
            });
        }
    }
    Ok(SlotVerdict {
        pass: checks.iter().all(|c| c.pass),
        checks,
    })
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    #[test]
    fn exact_rules() {
        assert!(exact_match(&ParamValue::Integer(100), &json!(100.0)));
        assert!(exact_match(&ParamValue::Integer(100), &json!("100")));
        assert!(exact_match(&ParamValue::String(" GBP ".into()), &json!("GBP")));
        assert!(!exact_match(&ParamValue::String("GBP".into()), &json!("USD")));
        assert!(exact_match(&ParamValue::Boolean(true), &json!(true)));
        assert!(exact_match(&ParamValue::String("2.50".into()), &json!(2.5)));
        assert!(!exact_match(&ParamValue::Number(2.5), &json!(2.4)));
    }
}
