//! Sub-goal memory and adaptive context construction.
//!
//! After every round the memory model decides whether the round continues
//! the latest sub-goal (fold: the latest unit is replaced by its extension)
//! or opens a new one (add: a fresh unit is appended). The planner context
//! grows round by round while a sub-goal is active, and is rebuilt from the
//! query plus the rendered completed units whenever a new sub-goal starts.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::debug;

use crate::backend::{ChatBackend, ChatMessage, ChatRequest, Purpose, Role, Sampling};
use crate::trace::{TraceError, TraceRecord};
use crate::trajectory::{
    clip_chars, render_units, AgentResponse, MemoryList, MemoryUnit, Observation, Round, RoundIndex,
    ToolLogEntry, UserQuery,
};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ContextError {
    #[error("fold requested on an empty memory list")]
    FoldOnEmptyMemory,
    #[error("incremental context requested without a previous context")]
    MissingPreviousContext,
    #[error("memory has no unit for round {0}")]
    MemoryBehindRound(RoundIndex),
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
}

impl From<TraceError> for ContextError {
    fn from(e: TraceError) -> Self {
        Self::MalformedTrace(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryConfig {
    /// When false the planner context is never compressed (ablation mode).
    pub enabled: bool,
    pub summary_budget: usize,
    pub digest_budget: usize,
    /// Observation characters shown to the memory model.
    pub observation_excerpt: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self { enabled: true, summary_budget: 1500, digest_budget: 500, observation_excerpt: 4000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryStepOutcome {
    pub unit: MemoryUnit,
    pub fold: bool,
    /// True when the backend failed twice or replied unparseably and the
    /// conservative default was applied.
    #[serde(default)]
    pub fell_back: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct MemoryDecision {
    same_sub_goal: bool,
    sub_goal: String,
    new_summary: Option<String>,
}

const MEMORY_INSTRUCTIONS: &str = "You maintain the structured working memory of a research agent. \
The trajectory is partitioned into sub-goals. Given the current sub-goal unit and the latest round, \
decide whether the latest round still serves the current sub-goal. Reply with exactly one JSON object \
{\"same_sub_goal\": true|false, \"sub_goal\": \"...\", \"new_summary\": \"...\"}. When same_sub_goal is \
true, new_summary is the updated summary of the current sub-goal. When false, sub_goal describes the \
new sub-goal and new_summary holds the key information from the latest round. Keep summaries dense \
and relevant to the user's task.";

fn memory_request(
    response: &AgentResponse,
    observation: Option<&Observation>,
    latest: Option<&MemoryUnit>,
    cfg: &MemoryConfig,
    sampling: Sampling,
) -> ChatRequest {
    let unit = match latest {
        Some(u) => render_units(std::slice::from_ref(u)),
        None => "(none: this is the first round)\n".to_string(),
    };
    let obs = match observation {
        Some(o) => format!("[{}] {}", o.status.as_str(), clip_chars(&o.payload, cfg.observation_excerpt)),
        None => "(none: the agent gave its final answer)".to_string(),
    };
    let user = format!(
        "Current sub-goal unit:\n{unit}\nLatest response:\n{}\n\nObservation:\n{obs}",
        response.render()
    );
    ChatRequest::new(Purpose::Memory, vec![ChatMessage::system(MEMORY_INSTRUCTIONS), ChatMessage::user(user)], sampling)
}

/// Extracts the first JSON object embedded in `text`.
pub(crate) fn extract_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(off) = text[start..].find('{') {
        let open = start + off;
        let mut depth = 0i32;
        let mut in_str = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        if let Ok(Value::Object(map)) = serde_json::from_str(&text[open..=i]) {
                            return Some(map);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
        start = open + 1;
    }
    None
}

fn parse_decision(reply: &crate::backend::ChatReply) -> Option<MemoryDecision> {
    let map = match &reply.structured_call {
        Some(call) => call.arguments.clone().into_iter().collect(),
        None => extract_json_object(&reply.text)?,
    };
    let same_sub_goal = map.get("same_sub_goal")?.as_bool()?;
    let sub_goal = map.get("sub_goal").and_then(Value::as_str).unwrap_or_default().trim().to_string();
    if !same_sub_goal && sub_goal.is_empty() {
        return None;
    }
    let new_summary = map.get("new_summary").and_then(Value::as_str).map(|s| s.trim().to_string());
    Some(MemoryDecision { same_sub_goal, sub_goal, new_summary })
}

fn fallback_sub_goal(response: &AgentResponse) -> String {
    response
        .reasoning
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(|l| clip_chars(l, 200))
        .unwrap_or_else(|| "initial sub-goal".to_string())
}

/// One application of the memory model to the latest round.
///
/// The backend is asked at most twice; if neither reply parses, the round
/// is folded into the latest unit with its summary unchanged (or, at the
/// first round, placed in a fresh unit).
pub fn memory_step(
    round: &Round,
    latest_unit: Option<&MemoryUnit>,
    backend: &dyn ChatBackend,
    cfg: &MemoryConfig,
    sampling: Sampling,
) -> MemoryStepOutcome {
    let request = memory_request(&round.response, round.observation.as_ref(), latest_unit, cfg, sampling);
    let mut decision = None;
    for attempt in 1..=2 {
        match backend.complete(&request) {
            Ok(reply) => match parse_decision(&reply) {
                Some(d) => {
                    decision = Some(d);
                    break;
                }
                None => debug!(round = round.index, attempt, "unparseable memory reply"),
            },
            Err(e) => debug!(round = round.index, attempt, "memory backend failure: {e}"),
        }
    }

    let log_entry = match (round.response.invocation(), round.observation.as_ref()) {
        (Some(inv), Some(obs)) => Some(ToolLogEntry::from_round(inv, obs, round.index, cfg.digest_budget)),
        _ => None,
    };
    let fell_back = decision.is_none();

    match (latest_unit, decision) {
        (Some(prior), d) if d.as_ref().is_none_or(|d| d.same_sub_goal) => {
            let mut unit = prior.clone();
            unit.round_indices.push(round.index);
            unit.tool_log.extend(log_entry);
            if let Some(summary) = d.and_then(|d| d.new_summary) {
                unit.summary = clip_chars(&summary, cfg.summary_budget);
            }
            MemoryStepOutcome { unit, fold: true, fell_back }
        }
        (_, d) => {
            let (sub_goal, summary) = match d {
                Some(d) if !d.sub_goal.is_empty() => (d.sub_goal, d.new_summary.unwrap_or_default()),
                Some(d) => (fallback_sub_goal(&round.response), d.new_summary.unwrap_or_default()),
                None => (fallback_sub_goal(&round.response), String::new()),
            };
            let unit = MemoryUnit {
                round_indices: vec![round.index],
                sub_goal,
                tool_log: log_entry.into_iter().collect(),
                summary: clip_chars(&summary, cfg.summary_budget),
            };
            MemoryStepOutcome { unit, fold: false, fell_back }
        }
    }
}

/// Replaces the latest unit (fold) or appends a new one (add).
pub fn apply_memory_update(mut memory: MemoryList, outcome: MemoryStepOutcome) -> Result<MemoryList, ContextError> {
    if outcome.fold {
        let last = memory.units.last_mut().ok_or(ContextError::FoldOnEmptyMemory)?;
        *last = outcome.unit;
    } else {
        memory.units.push(outcome.unit);
    }
    Ok(memory)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    Incremental,
    Reset,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextMessage {
    pub role: Role,
    pub text: String,
    /// Round that produced this message; `None` for preamble, query and
    /// rendered memory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<RoundIndex>,
}

impl ContextMessage {
    fn fixed(role: Role, text: impl Into<String>) -> Self {
        Self { role, text: text.into(), round: None }
    }
}

/// The planner input after a round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextState {
    pub messages: Vec<ContextMessage>,
    pub mode: ContextMode,
    pub rounds_in_current_unit: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSummary {
    pub mode: ContextMode,
    pub message_count: usize,
    pub rounds_in_current_unit: usize,
}

/// Number of fixed leading messages (system preamble and query).
pub const BASE_MESSAGES: usize = 2;

pub fn render_query(query: &UserQuery) -> String {
    let mut text = format!("Task: {}", query.text);
    if !query.attachments.is_empty() {
        text.push_str("\nAttached files:");
        for a in &query.attachments {
            text.push_str(&format!("\n- {} ({})", a.path.display(), a.media_type));
        }
    }
    text
}

pub fn render_observation(index: RoundIndex, obs: &Observation) -> String {
    format!("Observation (round {index}, {}):\n{}", obs.status.as_str(), obs.payload)
}

fn round_messages(round: &Round) -> Vec<ContextMessage> {
    let mut out = vec![ContextMessage { role: Role::Assistant, text: round.response.render(), round: Some(round.index) }];
    if let Some(obs) = &round.observation {
        out.push(ContextMessage { role: Role::User, text: render_observation(round.index, obs), round: Some(round.index) });
    }
    out
}

impl ContextState {
    /// The context before the first round: preamble and query only.
    pub fn initial(preamble: &str, query: &UserQuery) -> Self {
        Self {
            messages: vec![ContextMessage::fixed(Role::System, preamble), ContextMessage::fixed(Role::User, render_query(query))],
            mode: ContextMode::Reset,
            rounds_in_current_unit: 0,
        }
    }

    pub fn summary(&self) -> ContextSummary {
        ContextSummary { mode: self.mode, message_count: self.messages.len(), rounds_in_current_unit: self.rounds_in_current_unit }
    }

    pub fn to_chat(&self) -> Vec<ChatMessage> {
        self.messages.iter().map(|m| ChatMessage::new(m.role, m.text.clone())).collect()
    }

    /// Removes every message produced by the given rounds.
    pub fn prune(&mut self, rounds: &BTreeSet<RoundIndex>) {
        self.messages.retain(|m| m.round.is_none_or(|r| !rounds.contains(&r)));
    }

    pub fn text(&self) -> String {
        self.messages.iter().map(|m| m.text.as_str()).collect::<Vec<_>>().join("\n")
    }
}

/// Builds the planner context after `latest_round`, whose memory update has
/// already been applied. A round listed in `pruned` contributes no messages.
pub fn build_context(
    preamble: &str,
    query: &UserQuery,
    memory: &MemoryList,
    previous: Option<&ContextState>,
    latest_round: &Round,
    pruned: &BTreeSet<RoundIndex>,
) -> Result<ContextState, ContextError> {
    let current = memory.last().ok_or(ContextError::MemoryBehindRound(latest_round.index))?;
    if current.round_indices.last() != Some(&latest_round.index) {
        return Err(ContextError::MemoryBehindRound(latest_round.index));
    }
    let in_unit = current.round_indices.len();
    let new_messages = if pruned.contains(&latest_round.index) { Vec::new() } else { round_messages(latest_round) };

    if in_unit > 1 {
        let previous = previous.ok_or(ContextError::MissingPreviousContext)?;
        let mut messages = previous.messages.clone();
        messages.extend(new_messages);
        return Ok(ContextState { messages, mode: ContextMode::Incremental, rounds_in_current_unit: in_unit });
    }

    let mut messages = ContextState::initial(preamble, query).messages;
    let completed = memory.completed();
    if !completed.is_empty() {
        messages.push(ContextMessage::fixed(
            Role::User,
            format!("Completed sub-goals so far:\n{}", render_units(completed)),
        ));
    }
    messages.extend(new_messages);
    Ok(ContextState { messages, mode: ContextMode::Reset, rounds_in_current_unit: 1 })
}

/// Context construction with memory disabled: raw history only.
pub fn build_context_unmanaged(
    previous: &ContextState,
    latest_round: &Round,
    pruned: &BTreeSet<RoundIndex>,
) -> ContextState {
    let mut messages = previous.messages.clone();
    if !pruned.contains(&latest_round.index) {
        messages.extend(round_messages(latest_round));
    }
    ContextState { messages, mode: ContextMode::Incremental, rounds_in_current_unit: latest_round.index as usize }
}

/// Per-round planner context sizes (message counts) from a complete trace.
pub fn context_size_profile(records: &[TraceRecord]) -> Result<Vec<usize>, ContextError> {
    if !records.iter().any(|r| matches!(r, TraceRecord::Final(_))) {
        return Err(ContextError::MalformedTrace("no final record".into()));
    }
    let mut out = Vec::new();
    for r in records {
        if let TraceRecord::Round(rr) = r {
            let expected = out.len() as RoundIndex + 1;
            if rr.round.index != expected {
                return Err(ContextError::MalformedTrace(format!(
                    "round {} found where round {expected} was expected",
                    rr.round.index
                )));
            }
            out.push(rr.context.message_count);
        }
    }
    Ok(out)
}

pub fn context_size_profile_from_text(text: &str) -> Result<Vec<usize>, ContextError> {
    context_size_profile(&crate::trace::parse_trace(text)?)
}
