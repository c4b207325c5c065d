//! Turns a raw backend reply into an [`AgentResponse`].
//!
//! Structured tool calls win over calls written in text. The text grammar
//! is `<tool_call>{"name": ..., "arguments": {...}}</tool_call>` for actions
//! and `<answer>...</answer>` for the final answer. A reply that neither
//! acts nor answers is returned as `Malformed`, never as an error.

use serde_json::Value;

use crate::backend::ChatReply;
use crate::trajectory::{AgentResponse, Arguments, ResponseAction, ToolInvocation};

pub const CALL_OPEN: &str = "<tool_call>";
pub const CALL_CLOSE: &str = "</tool_call>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

/// A tagged block found in reply text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Block {
    pub raw: String,
    pub inner: String,
}

/// Splits `text` into tagged blocks and the remaining prose. An opening tag
/// without its closing tag yields `Err` with the unterminated fragment.
pub(crate) fn extract_blocks(text: &str, open: &str, close: &str) -> Result<(Vec<Block>, String), String> {
    let mut blocks = Vec::new();
    let mut rest = String::new();
    let mut cursor = 0;
    while let Some(start) = text[cursor..].find(open).map(|i| cursor + i) {
        rest.push_str(&text[cursor..start]);
        let body_start = start + open.len();
        let Some(end) = text[body_start..].find(close).map(|i| body_start + i) else {
            return Err(text[start..].chars().take(80).collect());
        };
        blocks.push(Block { raw: text[start..end + close.len()].to_string(), inner: text[body_start..end].trim().to_string() });
        cursor = end + close.len();
    }
    rest.push_str(&text[cursor..]);
    Ok((blocks, rest))
}

/// Parses the JSON body of a text tool call.
pub(crate) fn parse_call_body(body: &str) -> Result<(String, Arguments), String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("tool call is not valid JSON: {e}"))?;
    let name = v
        .get("name")
        .and_then(Value::as_str)
        .filter(|n| !n.trim().is_empty())
        .ok_or("tool call has no name")?
        .trim()
        .to_string();
    let arguments = match v.get("arguments") {
        None | Some(Value::Null) => Arguments::new(),
        Some(Value::Object(m)) => m.clone().into_iter().collect(),
        Some(Value::String(s)) => serde_json::from_str(s).map_err(|e| format!("tool call arguments: {e}"))?,
        Some(other) => return Err(format!("tool call arguments must be an object, got {other}")),
    };
    Ok((name, arguments))
}

pub fn parse_agent_response(reply: &ChatReply) -> AgentResponse {
    let malformed = |reasoning: String, reason: String| AgentResponse {
        reasoning,
        action: ResponseAction::Malformed { reason },
        note: None,
    };

    let (call_blocks, without_calls) = match extract_blocks(&reply.text, CALL_OPEN, CALL_CLOSE) {
        Ok(x) => x,
        Err(frag) => return malformed(reply.text.trim().to_string(), format!("unterminated tool call: {frag}")),
    };
    let (answer_blocks, prose) = match extract_blocks(&without_calls, ANSWER_OPEN, ANSWER_CLOSE) {
        Ok(x) => x,
        Err(frag) => return malformed(without_calls.trim().to_string(), format!("unterminated answer: {frag}")),
    };
    let reasoning = prose.trim().to_string();

    let mut calls_seen = call_blocks.len();
    let first_call = match &reply.structured_call {
        Some(sc) => {
            calls_seen += 1;
            let mut inv = ToolInvocation::new(sc.name.trim(), sc.arguments.clone());
            if inv.capability_name.is_empty() {
                return malformed(reasoning, "structured tool call has no name".into());
            }
            inv.raw_text = serde_json::json!({ "name": sc.name, "arguments": sc.arguments }).to_string();
            Some(Ok(inv))
        }
        None => call_blocks.first().map(|b| {
            parse_call_body(&b.inner).map(|(name, arguments)| ToolInvocation { capability_name: name, arguments, raw_text: b.raw.clone() })
        }),
    };

    let mut notes = Vec::new();
    if calls_seen > 1 {
        notes.push(format!("{calls_seen} tool calls emitted; only the first is executed"));
    }
    match first_call {
        Some(Ok(invocation)) => {
            if !answer_blocks.is_empty() {
                notes.push("reply has both a tool call and a final answer; the call takes precedence".into());
            }
            AgentResponse {
                reasoning,
                action: ResponseAction::Invoke { invocation },
                note: (!notes.is_empty()).then(|| notes.join("; ")),
            }
        }
        Some(Err(reason)) => malformed(reasoning, reason),
        None => match answer_blocks.first() {
            Some(answer) => AgentResponse { reasoning, action: ResponseAction::Answer { text: answer.inner.clone() }, note: None },
            None => malformed(reasoning, "no tool call or final answer found".into()),
        },
    }
}
