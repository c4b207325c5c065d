//! Chat-completion interface shared by every model call in the runtime.
//!
//! Two implementations ship: [`HttpBackend`] for a live chat-completion
//! endpoint and [`ScriptedBackend`] for deterministic offline runs.
//! [`RecordingBackend`] and [`ReplayBackend`] wrap either for trace
//! record/replay.

mod http;
mod record;
mod scripted;

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::trajectory::Arguments;

pub use http::{HttpBackend, HttpBackendConfig};
pub use record::{RecordingBackend, ReplayBackend};
pub use scripted::{FixtureEntry, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::System => "system",
            Self::User => "user",
            Self::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
    /// Opaque attachment references (e.g. an ephemeral screenshot).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<String>,
}

impl ChatMessage {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self { role, text: text.into(), attachments: Vec::new() }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self::new(Role::System, text)
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self::new(Role::User, text)
    }
}

/// Function schema advertised to a live endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    /// JSON-schema object describing the parameters.
    pub parameters: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self { temperature: 1.0, top_p: 0.95 }
    }
}

impl Sampling {
    pub fn is_valid(&self) -> bool {
        (0.0..=2.0).contains(&self.temperature) && self.top_p > 0.0 && self.top_p <= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Planning,
    Memory,
    SupervisorDiagnosis,
    SupervisorRegen,
    SubagentBrowser,
    SubagentData,
    Synthesis,
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_schemas: Vec<ToolSchema>,
    pub sampling: Sampling,
    pub purpose: Purpose,
}

impl ChatRequest {
    pub fn new(purpose: Purpose, messages: Vec<ChatMessage>, sampling: Sampling) -> Self {
        Self { messages, tool_schemas: Vec::new(), sampling, purpose }
    }

    pub fn with_tools(mut self, tools: Vec<ToolSchema>) -> Self {
        self.tool_schemas = tools;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("request has no messages".into()));
        }
        if !self.sampling.is_valid() {
            return Err(BackendError::InvalidRequest(format!(
                "sampling out of range: temperature={} top_p={}",
                self.sampling.temperature, self.sampling.top_p
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredCall {
    pub name: String,
    #[serde(default)]
    pub arguments: Arguments,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatReply {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured_call: Option<StructuredCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

impl ChatReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self { text: text.into(), structured_call: None, usage: None }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unreachable after {attempts} attempt(s): {detail}")]
    Unreachable { attempts: u32, detail: String },
    #[error("backend rejected request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("scripted fixture exhausted for purpose {purpose} at call {counter}")]
    FixtureUnderflow { purpose: Purpose, counter: u32 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error("replay divergence at exchange {position}: {detail}")]
    ReplayDivergence { position: usize, detail: String },
    /// An error reproduced from a recorded trace.
    #[error("{0}")]
    Replayed(String),
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        (**self).complete(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_bounds() {
        assert!(Sampling::default().is_valid());
        assert!(!Sampling { temperature: 2.5, top_p: 0.9 }.is_valid());
        assert!(!Sampling { temperature: 1.0, top_p: 0.0 }.is_valid());
        assert!(Sampling { temperature: 0.0, top_p: 1.0 }.is_valid());
    }

    #[test]
    fn empty_request_rejected() {
        let req = ChatRequest::new(Purpose::Planning, vec![], Sampling::default());
        assert!(matches!(req.validate(), Err(BackendError::InvalidRequest(_))));
    }

    #[test]
    fn purpose_display_is_snake_case() {
        assert_eq!(Purpose::SupervisorRegen.to_string(), "supervisor_regen");
    }
}
