//! Coalition-of-models orchestration for tool-use agents, with an offline
//! evaluation harness.

pub mod bench;
pub mod catalog;
pub mod cli;
pub mod config;
pub mod eval;
pub mod forge;
pub mod gateway;
pub mod jsonpath;
pub mod pipeline;
pub mod planner;
pub mod rag;
pub mod response;
pub mod runtime;
pub mod slots;
pub mod templates;
pub mod text;
pub mod trace;

#[cfg(test)]
mod test_http;
