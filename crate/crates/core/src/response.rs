//! Final answer composition.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Exchange, Gateway, GatewayError, ModelRole};
use crate::slots::ContextStore;
use crate::templates::{render, Templates};

pub const NO_TOOL_RESULTS: &str = "(no tool results)";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalResponse {
    pub text: String,
    /// Step indices whose results were given to the model.
    pub sources: Vec<usize>,
}

#[derive(Debug, Error)]
pub enum ResponseError {
    #[error("response model returned an empty completion")]
    EmptyCompletion,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub fn build_response_prompt(query: &str, ctx: &ContextStore, templates: &Templates) -> String {
    render(
        &templates.response,
        &[("query", query.trim()), ("results", &ctx.render(NO_TOOL_RESULTS))],
    )
}

/// One ResponseFormer call; the completion is returned verbatim.
pub fn form_response(
    query: &str,
    ctx: &ContextStore,
    gateway: &Gateway,
    templates: &Templates,
) -> Result<(FinalResponse, Exchange), ResponseError> {
    let prompt = build_response_prompt(query, ctx, templates);
    let (completion, exchange) = gateway.exchange(ModelRole::ResponseFormer, &prompt)?;
    if completion.text.trim().is_empty() {
        return Err(ResponseError::EmptyCompletion);
    }
    Ok((
        FinalResponse {
            text: completion.text,
            sources: ctx.items().iter().map(|i| i.step).collect(),
        },
        exchange,
    ))
}
