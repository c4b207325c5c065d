//! Canonical data model shared by every part of the runtime: queries, rounds,
//! tool invocations, observations, memory units and run budgets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Global (main-agent) round index, starting at 1.
pub type RoundIndex = u32;

/// Typed key/value arguments of a tool invocation. Ordered so that
/// serialization is deterministic.
pub type Arguments = BTreeMap<String, Value>;

pub const TRUNCATION_MARKER: &str = "[truncated]";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TrajectoryError {
    #[error("query text is empty")]
    EmptyQuery,
    #[error("attachment path listed twice: {0}")]
    DuplicateAttachment(String),
}

/// Clip `text` to at most `cap` characters, appending the truncation marker
/// when anything was removed. The marker is not counted against the cap.
pub fn clip_chars(text: &str, cap: usize) -> String {
    match text.char_indices().nth(cap) {
        None => text.to_string(),
        Some((byte, _)) => format!("{}{}", &text[..byte], TRUNCATION_MARKER),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub path: PathBuf,
    pub media_type: String,
}

impl Attachment {
    pub fn from_path(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let media_type = media_type_for(&path).to_string();
        Self { path, media_type }
    }
}

/// Media type guessed from the file extension.
pub fn media_type_for(path: &Path) -> &'static str {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "csv" => "text/csv",
        "tsv" => "text/tab-separated-values",
        "txt" | "log" => "text/plain",
        "md" | "markdown" => "text/markdown",
        "json" | "jsonl" => "application/json",
        "html" | "htm" => "text/html",
        "pdf" => "application/pdf",
        "zip" => "application/zip",
        _ => "application/octet-stream",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserQuery {
    pub id: String,
    pub text: String,
    pub attachments: Vec<Attachment>,
}

impl UserQuery {
    /// Builds a query whose id is a content digest, so identical inputs map
    /// to identical ids.
    pub fn new(text: impl Into<String>, attachments: Vec<Attachment>) -> Result<Self, TrajectoryError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TrajectoryError::EmptyQuery);
        }
        let mut seen = BTreeSet::new();
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        for a in &attachments {
            let key = a.path.to_string_lossy().to_string();
            if !seen.insert(key.clone()) {
                return Err(TrajectoryError::DuplicateAttachment(key));
            }
            hasher.update([0u8]);
            hasher.update(key.as_bytes());
        }
        let digest = hasher.finalize();
        let id = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self { id, text, attachments })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub capability_name: String,
    pub arguments: Arguments,
    /// The exact call text the model emitted.
    pub raw_text: String,
}

impl ToolInvocation {
    pub fn new(capability_name: impl Into<String>, arguments: Arguments) -> Self {
        let capability_name = capability_name.into();
        let raw_text = serde_json::json!({ "name": capability_name, "arguments": arguments }).to_string();
        Self { capability_name, arguments, raw_text }
    }

    /// Compact `name(k=v, ...)` rendering used for digests and prompts.
    pub fn render_compact(&self) -> String {
        format!("{}({})", self.capability_name, render_arguments(&self.arguments))
    }
}

pub fn render_arguments(args: &Arguments) -> String {
    args.iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationStatus {
    Ok,
    ToolError,
    ParseError,
    Timeout,
}

impl ObservationStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::ToolError => "tool_error",
            Self::ParseError => "parse_error",
            Self::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub status: ObservationStatus,
    /// Text payload; structured results are carried as their JSON rendering.
    pub payload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_detail: Option<String>,
    pub produced_at: DateTime<Utc>,
}

impl Observation {
    pub fn ok(payload: impl Into<String>) -> Self {
        Self {
            status: ObservationStatus::Ok,
            payload: payload.into(),
            error_detail: None,
            produced_at: Utc::now(),
        }
    }

    /// A non-ok observation. `status` must not be `Ok`.
    pub fn failure(status: ObservationStatus, detail: impl Into<String>) -> Self {
        debug_assert!(status != ObservationStatus::Ok);
        let detail = detail.into();
        Self {
            status,
            payload: format!("{}: {}", status.as_str(), detail),
            error_detail: Some(detail),
            produced_at: Utc::now(),
        }
    }

    pub fn with_payload(mut self, payload: impl Into<String>) -> Self {
        self.payload = payload.into();
        self
    }

    pub fn clipped(mut self, cap: usize) -> Self {
        self.payload = clip_chars(&self.payload, cap);
        self
    }

    pub fn is_ok(&self) -> bool {
        self.status == ObservationStatus::Ok
    }

    /// Checks `status=ok ⟺ error_detail absent`.
    pub fn is_consistent(&self) -> bool {
        self.is_ok() == self.error_detail.is_none()
    }
}

/// What a model turn does: act, terminate, or fail to parse. Holding these
/// as one enum makes "exactly one of invocation / final answer" structural.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ResponseAction {
    Invoke { invocation: ToolInvocation },
    Answer { text: String },
    Malformed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub reasoning: String,
    pub action: ResponseAction,
    /// Parser remarks, e.g. a call/answer conflict or an extra tool call.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl AgentResponse {
    pub fn invocation(&self) -> Option<&ToolInvocation> {
        match &self.action {
            ResponseAction::Invoke { invocation } => Some(invocation),
            _ => None,
        }
    }

    pub fn final_answer(&self) -> Option<&str> {
        match &self.action {
            ResponseAction::Answer { text } => Some(text),
            _ => None,
        }
    }

    pub fn is_malformed(&self) -> bool {
        matches!(self.action, ResponseAction::Malformed { .. })
    }

    /// Text of the assistant message as it enters the planner context.
    pub fn render(&self) -> String {
        let mut out = self.reasoning.trim().to_string();
        let tail = match &self.action {
            ResponseAction::Invoke { invocation } => format!("[call] {}", invocation.render_compact()),
            ResponseAction::Answer { text } => format!("[answer] {text}"),
            ResponseAction::Malformed { reason } => format!("[unparsed] {reason}"),
        };
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&tail);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub index: RoundIndex,
    pub response: AgentResponse,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
}

impl Round {
    /// A round carries an observation unless it is the terminating one.
    pub fn is_consistent(&self) -> bool {
        self.response.final_answer().is_some() == self.observation.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolLogEntry {
    pub round_index: RoundIndex,
    pub capability_name: String,
    pub arguments_digest: String,
    pub result_digest: String,
}

impl ToolLogEntry {
    pub fn from_round(invocation: &ToolInvocation, observation: &Observation, round: RoundIndex, cap: usize) -> Self {
        let args = render_arguments(&invocation.arguments);
        let args = if args.is_empty() { "(none)".to_string() } else { args };
        let result = observation.payload.split_whitespace().collect::<Vec<_>>().join(" ");
        let result = if result.is_empty() { "(empty)".to_string() } else { result };
        Self {
            round_index: round,
            capability_name: invocation.capability_name.clone(),
            arguments_digest: clip_chars(&args, cap),
            result_digest: clip_chars(&format!("{}: {}", observation.status.as_str(), result), cap),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryUnit {
    pub round_indices: Vec<RoundIndex>,
    pub sub_goal: String,
    pub tool_log: Vec<ToolLogEntry>,
    pub summary: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MemoryList {
    pub units: Vec<MemoryUnit>,
}

impl MemoryList {
    pub fn new(units: Vec<MemoryUnit>) -> Self {
        Self { units }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn last(&self) -> Option<&MemoryUnit> {
        self.units.last()
    }

    /// All units but the latest (the completed sub-goals).
    pub fn completed(&self) -> &[MemoryUnit] {
        match self.units.len() {
            0 => &[],
            n => &self.units[..n - 1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunBudget {
    pub max_tool_calls: u32,
    #[serde(with = "duration_secs")]
    pub max_wall_clock: Duration,
    pub max_subagent_steps: u32,
}

impl Default for RunBudget {
    fn default() -> Self {
        Self {
            max_tool_calls: 75,
            max_wall_clock: Duration::from_secs(90 * 60),
            max_subagent_steps: 10,
        }
    }
}

impl RunBudget {
    pub fn is_valid(&self) -> bool {
        self.max_tool_calls > 0 && !self.max_wall_clock.is_zero() && self.max_subagent_steps > 0
    }
}

pub(crate) mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MemoryViolation {
    EmptyUnit { unit: usize },
    EmptySubGoal { unit: usize },
    NotIncreasing { unit: usize },
    /// A unit starts at or before the end of the unit preceding it.
    OutOfOrder { unit: usize },
    Overlap { round: RoundIndex },
    Gap { round: RoundIndex },
    OutOfRange { round: RoundIndex },
}

impl std::fmt::Display for MemoryViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::EmptyUnit { unit } => write!(f, "unit {unit} has no rounds"),
            Self::EmptySubGoal { unit } => write!(f, "unit {unit} has an empty sub-goal"),
            Self::NotIncreasing { unit } => write!(f, "unit {unit} round indices not strictly increasing"),
            Self::OutOfOrder { unit } => write!(f, "unit {unit} is out of round order"),
            Self::Overlap { round } => write!(f, "overlap at round {round}"),
            Self::Gap { round } => write!(f, "gap at round {round}"),
            Self::OutOfRange { round } => write!(f, "round {round} beyond processed rounds"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<MemoryViolation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that the units partition rounds `1..=processed_rounds` in order.
pub fn validate_memory_list(memory: &MemoryList, processed_rounds: u32) -> ValidationReport {
    let mut violations = Vec::new();
    let mut seen: BTreeMap<RoundIndex, usize> = BTreeMap::new();
    let mut prev_max: Option<RoundIndex> = None;

    for (i, unit) in memory.units.iter().enumerate() {
        if unit.round_indices.is_empty() {
            violations.push(MemoryViolation::EmptyUnit { unit: i });
        }
        if unit.sub_goal.trim().is_empty() {
            violations.push(MemoryViolation::EmptySubGoal { unit: i });
        }
        if unit.round_indices.windows(2).any(|w| w[0] >= w[1]) {
            violations.push(MemoryViolation::NotIncreasing { unit: i });
        }
        if let (Some(first), Some(max)) = (unit.round_indices.first(), prev_max) {
            if *first <= max && !unit.round_indices.iter().all(|r| seen.contains_key(r)) {
                violations.push(MemoryViolation::OutOfOrder { unit: i });
            }
        }
        for &r in &unit.round_indices {
            if r == 0 || r > processed_rounds {
                violations.push(MemoryViolation::OutOfRange { round: r });
            }
            if seen.insert(r, i).is_some() {
                violations.push(MemoryViolation::Overlap { round: r });
            }
        }
        if let Some(max) = unit.round_indices.iter().max() {
            prev_max = Some(prev_max.map_or(*max, |p| p.max(*max)));
        }
    }
    for r in 1..=processed_rounds {
        if !seen.contains_key(&r) {
            violations.push(MemoryViolation::Gap { round: r });
        }
    }
    ValidationReport { violations }
}

fn render_round_list(rounds: &[RoundIndex]) -> String {
    rounds.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(",")
}

/// Deterministic text rendering of the memory list, one block per unit.
pub fn render_memory(memory: &MemoryList) -> String {
    render_units(&memory.units)
}

pub fn render_units(units: &[MemoryUnit]) -> String {
    let mut out = String::new();
    for (i, unit) in units.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "### Sub-goal {} (rounds {}): {}",
            i + 1,
            render_round_list(&unit.round_indices),
            unit.sub_goal
        );
        for entry in &unit.tool_log {
            let _ = writeln!(
                out,
                "- [r{}] {}({}) => {}",
                entry.round_index, entry.capability_name, entry.arguments_digest, entry.result_digest
            );
        }
        let _ = writeln!(out, "Summary: {}", unit.summary);
    }
    out
}
