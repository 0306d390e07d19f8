//! Per-case outcomes and the aggregated suite report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ResponseScore {
    pub cos: f64,
    pub rl_pre: f64,
    pub rl_rec: f64,
    pub rl_f: f64,
}

impl ResponseScore {
    fn check(&self) -> Result<(), String> {
        for (name, v) in [
            ("cos", self.cos),
            ("rl_pre", self.rl_pre),
            ("rl_rec", self.rl_rec),
            ("rl_f", self.rl_f),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Verdicts for one benchmark case. `procedural_pass` is derived, never set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOutcome")]
pub struct CaseOutcome {
    pub id: String,
    pub plan_pass: bool,
    pub slot_pass: bool,
    procedural_pass: bool,
    pub cos: f64,
    pub rl_pre: f64,
    pub rl_rec: f64,
    pub rl_f: f64,
    /// Scores against each expected snippet when there is more than one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snippets: Vec<ResponseScore>,
    /// The operational error that ended the run early, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Deserialize)]
struct RawOutcome {
    id: String,
    plan_pass: bool,
    slot_pass: bool,
    procedural_pass: bool,
    cos: f64,
    rl_pre: f64,
    rl_rec: f64,
    rl_f: f64,
    #[serde(default)]
    snippets: Vec<ResponseScore>,
    #[serde(default)]
    error: Option<String>,
}

impl TryFrom<RawOutcome> for CaseOutcome {
    type Error = String;

    fn try_from(raw: RawOutcome) -> Result<Self, Self::Error> {
        if raw.procedural_pass != (raw.plan_pass && raw.slot_pass) {
            return Err(format!(
                "case '{}': procedural_pass must equal plan_pass && slot_pass",
                raw.id
            ));
        }
        let mut outcome = CaseOutcome::new(
            raw.id,
            raw.plan_pass,
            raw.slot_pass,
            ResponseScore {
                cos: raw.cos,
                rl_pre: raw.rl_pre,
                rl_rec: raw.rl_rec,
                rl_f: raw.rl_f,
            },
        )
        .map_err(|e| e.to_string())?;
        for s in &raw.snippets {
            s.check()?;
        }
        outcome.snippets = raw.snippets;
        outcome.error = raw.error;
        Ok(outcome)
    }
}

impl CaseOutcome {
    pub fn new(
        id: impl Into<String>,
        plan_pass: bool,
        slot_pass: bool,
        response: ResponseScore,
    ) -> Result<Self, EvalError> {
        let id = id.into();
        response
            .check()
            .map_err(|e| EvalError::InvalidOutcome(format!("case '{id}': {e}")))?;
        Ok(Self {
            id,
            plan_pass,
            slot_pass,
            procedural_pass: plan_pass && slot_pass,
            cos: response.cos,
            rl_pre: response.rl_pre,
            rl_rec: response.rl_rec,
            rl_f: response.rl_f,
            snippets: Vec::new(),
            error: None,
        })
    }

    /// A case that failed before producing a response.
    pub fn failed(id: impl Into<String>, plan_pass: bool, error: impl Into<String>) -> Self {
        let mut outcome = Self::new(id, plan_pass, false, ResponseScore::default()).expect("zero scores are in range");
        outcome.error = Some(error.into());
        outcome
    }

    pub fn procedural_pass(&self) -> bool {
        self.procedural_pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub n_cases: usize,
    /// Percentages in [0, 100], unrounded.
    pub planner_acc: f64,
    pub slot_acc: f64,
    pub procedural_acc: f64,
    pub cos: f64,
    pub rl_pre: f64,
    pub rl_rec: f64,
    pub rl_f: f64,
}

/// Aggregates outcomes. Sums run in case-id order so the result does not
/// depend on the order outcomes were produced in.
pub fn aggregate(outcomes: &[CaseOutcome]) -> Result<SuiteReport, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::EmptyOutcomes);
    }
    let mut sorted: Vec<&CaseOutcome> = outcomes.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let n = sorted.len() as f64;
    let pct = |f: fn(&CaseOutcome) -> bool| 100.0 * sorted.iter().filter(|o| f(o)).count() as f64 / n;
    let mean = |f: fn(&CaseOutcome) -> f64| sorted.iter().map(|o| f(o)).sum::<f64>() / n;
    Ok(SuiteReport {
        n_cases: sorted.len(),
        planner_acc: pct(|o| o.plan_pass),
        slot_acc: pct(|o| o.slot_pass),
        procedural_acc: pct(|o| o.procedural_pass),
        cos: mean(|o| o.cos),
        rl_pre: mean(|o| o.rl_pre),
        rl_rec: mean(|o| o.rl_rec),
        rl_f: mean(|o| o.rl_f),
    })
}

/// Plain-text table: percentages to 1 decimal, similarity scores to 3.
pub fn render_table(report: &SuiteReport) -> String {
    let rows = [
        ("Cases", report.n_cases.to_string()),
        ("Planner Accuracy", format!("{:.1}%", report.planner_acc)),
        ("Slot Filling Accuracy", format!("{:.1}%", report.slot_acc)),
        ("Overall Procedural Accuracy", format!("{:.1}%", report.procedural_acc)),
        ("Cos", format!("{:.3}", report.cos)),
        ("RLPre", format!("{:.3}", report.rl_pre)),
        ("RLRec", format!("{:.3}", report.rl_rec)),
        ("RLf", format!("{:.3}", report.rl_f)),
    ];
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<width$}  {v:>8}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(id: &str, plan: bool, slot: bool, cos: f64) -> CaseOutcome {
        CaseOutcome::new(
            id,
            plan,
            slot,
            ResponseScore {
                cos,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn arithmetic() {
        let r = aggregate(&[
            outcome("a", true, true, 0.5),
            outcome("b", true, false, 0.7),
            outcome("c", false, true, 0.6),
        ])
        .unwrap();
        assert_eq!(format!("{:.1}", r.planner_acc), "66.7");
        assert_eq!(format!("{:.1}", r.procedural_acc), "33.3");
        assert!((r.cos - 0.6).abs() < 1e-12);
        let r = aggregate(&[outcome("a", true, true, 0.5), outcome("b", true, true, 0.7)]).unwrap();
        assert_eq!((r.planner_acc, r.slot_acc, r.procedural_acc), (100.0, 100.0, 100.0));
        assert!((r.cos - 0.6).abs() < 1e-12);
        assert!(matches!(aggregate(&[]), Err(EvalError::EmptyOutcomes)));
    }

    #[test]
    fn procedural_is_enforced_on_load() {
        let good = serde_json::to_string(&outcome("a", true, false, 0.1)).unwrap();
        assert!(serde_json::from_str::<CaseOutcome>(&good).is_ok());
        let bad = good.replace("\"procedural_pass\":false", "\"procedural_pass\":true");
        assert!(serde_json::from_str::<CaseOutcome>(&bad).is_err());
        let out_of_range = good.replace("\"cos\":0.1", "\"cos\":1.5");
        assert!(serde_json::from_str::<CaseOutcome>(&out_of_range).is_err());
    }

    #[test]
    fn table_has_column_names() {
        let t = render_table(&aggregate(&[outcome("a", true, true, 0.5)]).unwrap());
        for name in [
            "Planner Accuracy",
            "Slot Filling Accuracy",
            "Overall Procedural Accuracy",
            "Cos",
            "RLPre",
            "RLRec",
            "RLf",
        ] {
            assert!(t.contains(name));
        }
        assert!(t.contains("100.0%"));
    }
}
