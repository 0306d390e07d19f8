//! Execution traces.
//!
//! Written as JSON lines. A run produces a `plan` record, one `step` record
//! per executed step, and a `response` record when the run got that far.
//! Every record carries the model exchanges (role, model id, prompt SHA-256,
//! raw completion) made in that stage.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gateway::Exchange;
use crate::jsonpath::JsonPath;
use crate::planner::{CritiqueRound, Plan, SanitizeLog};
use crate::runtime::{PreparedRequest, ToolResult};
use crate::slots::ParamMap;

// Records are built once per stage and go straight to serialization, so
// boxing the large variant would only add indirection.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum TraceRecord {
    Plan {
        exchanges: Vec<Exchange>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        plan: Option<Plan>,
        #[serde(default)]
        sanitize: SanitizeLog,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        critique: Option<CritiqueRound>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Step {
        step: usize,
        tool: String,
        exchanges: Vec<Exchange>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<ParamMap>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        request: Option<PreparedRequest>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        result: Option<ToolResult>,
        /// Paths chosen when the result was over budget.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        selected_paths: Option<Vec<JsonPath>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reduced: Option<Value>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Response {
        exchanges: Vec<Exchange>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        text: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
}

/// Append-only list of trace records.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExecutionTrace {
    records: Vec<TraceRecord>,
}

impl ExecutionTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn step_count(&self) -> usize {
        self.records
            .iter()
            .filter(|r| matches!(r, TraceRecord::Step { .. }))
            .count()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for record in &self.records {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn write_file(&self, path: &Path) -> io::Result<()> {
        self.write_jsonl(BufWriter::new(File::create(path)?))
    }
}
