//! Success rate against model size.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::gateway::ModelSpec;

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub id: String,
    pub parameter_count_billions: f64,
    pub success: f64,
}

/// Rows sorted by parameter count, then id.
pub fn cost_report(models: &[ModelSpec], success: &BTreeMap<String, f64>) -> Result<Vec<CostRow>, EvalError> {
    let mut rows = success
        .iter()
        .map(|(id, &rate)| {
            let spec = models
                .iter()
                .find(|m| &m.id == id)
                .ok_or_else(|| EvalError::UnknownModel(id.clone()))?;
            let params = spec
                .parameter_count_billions
                .ok_or_else(|| EvalError::MissingParamCount(id.clone()))?;
            Ok(CostRow {
                id: id.clone(),
                parameter_count_billions: params,
                success: rate,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    rows.sort_by(|a, b| {
        a.parameter_count_billions
            .total_cmp(&b.parameter_count_billions)
            .then_with(|| a.id.cmp(&b.id))
    });
    Ok(rows)
}

pub fn cost_report_csv(rows: &[CostRow]) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| EvalError::Io(e.to_string()))?;
    }
    if rows.is_empty() {
        w.write_record(["id", "parameter_count_billions", "success"])
            .map_err(|e| EvalError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| EvalError::Io(e.to_string()))
}
