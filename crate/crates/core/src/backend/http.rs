use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{BackendError, ChatBackend, ChatReply, ChatRequest, StructuredCall, Usage};
use crate::trajectory::Arguments;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpBackendConfig {
    /// Base address, e.g. `https://api.example.com/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer credential.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_retries() -> u32 {
    2
}

fn default_timeout() -> u64 {
    300
}

/// Client for an OpenAI-style `/chat/completions` endpoint with function
/// calling.
pub struct HttpBackend {
    config: HttpBackendConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::InvalidRequest(format!("credential environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        Ok(Self { config, api_key, client })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

/// Request body in the chat-completion wire format.
pub(crate) fn request_body(model: &str, request: &ChatRequest) -> Value {
    let messages: Vec<Value> = request
        .messages
        .iter()
        .map(|m| {
            if m.attachments.is_empty() {
                json!({ "role": m.role.as_str(), "content": m.text })
            } else {
                let mut parts = vec![json!({ "type": "text", "text": m.text })];
                parts.extend(
                    m.attachments
                        .iter()
                        .map(|a| json!({ "type": "image_url", "image_url": { "url": a } })),
                );
                json!({ "role": m.role.as_str(), "content": parts })
            }
        })
        .collect();
    let mut body = json!({
        "model": model,
        "messages": messages,
        "temperature": request.sampling.temperature,
        "top_p": request.sampling.top_p,
    });
    if !request.tool_schemas.is_empty() {
        body["tools"] = request
            .tool_schemas
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": { "name": t.name, "description": t.description, "parameters": t.parameters }
                })
            })
            .collect();
    }
    body
}

/// Parses a chat-completion response body. Extra tool calls beyond the
/// first are appended to the text in the tagged call grammar so that the
/// agent-side parser can see and report them.
pub(crate) fn parse_response(body: &Value) -> Result<ChatReply, BackendError> {
    let message = body
        .pointer("/choices/0/message")
        .ok_or_else(|| BackendError::MalformedResponse("missing choices[0].message".into()))?;
    let mut text = message.get("content").and_then(Value::as_str).unwrap_or_default().to_string();
    let mut structured_call = None;
    if let Some(calls) = message.get("tool_calls").and_then(Value::as_array) {
        for (i, call) in calls.iter().enumerate() {
            let name = call
                .pointer("/function/name")
                .and_then(Value::as_str)
                .ok_or_else(|| BackendError::MalformedResponse("tool call without function name".into()))?;
            let raw_args = call.pointer("/function/arguments").cloned().unwrap_or(Value::Null);
            let arguments: Arguments = match raw_args {
                Value::String(s) if s.trim().is_empty() => Arguments::new(),
                Value::String(s) => serde_json::from_str(&s)
                    .map_err(|e| BackendError::MalformedResponse(format!("tool call arguments: {e}")))?,
                Value::Object(m) => m.into_iter().collect(),
                Value::Null => Arguments::new(),
                other => return Err(BackendError::MalformedResponse(format!("tool call arguments: {other}"))),
            };
            if i == 0 {
                structured_call = Some(StructuredCall { name: name.to_string(), arguments });
            } else {
                text.push_str(&format!(
                    "\n<tool_call>{}</tool_call>",
                    json!({ "name": name, "arguments": arguments })
                ));
            }
        }
    }
    let usage = body.get("usage").and_then(|u| {
        Some(Usage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
            completion_tokens: u.get("completion_tokens")?.as_u64()?,
        })
    });
    Ok(ChatReply { text, structured_call, usage })
}

enum Attempt {
    Done(ChatReply),
    Retry(String),
    Fatal(BackendError),
}

impl HttpBackend {
    fn attempt(&self, body: &Value) -> Attempt {
        let mut builder = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = match builder.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = response.status();
        let text = match response.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        if status.as_u16() == 429 || status.is_server_error() {
            return Attempt::Retry(format!("status {status}"));
        }
        if !status.is_success() {
            return Attempt::Fatal(BackendError::Rejected { status: status.as_u16(), body: text });
        }
        match serde_json::from_str::<Value>(&text) {
            Ok(v) => match parse_response(&v) {
                Ok(reply) => Attempt::Done(reply),
                Err(e) => Attempt::Fatal(e),
            },
            Err(e) => Attempt::Fatal(BackendError::MalformedResponse(e.to_string())),
        }
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        request.validate()?;
        let body = request_body(&self.config.model, request);
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for n in 1..=attempts {
            debug!(purpose = %request.purpose, attempt = n, "chat completion");
            match self.attempt(&body) {
                Attempt::Done(reply) => return Ok(reply),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(detail) => {
                    warn!(attempt = n, "transient backend failure: {detail}");
                    last = detail;
                    if n < attempts {
                        std::thread::sleep(Duration::from_millis(250 * u64::from(n)));
                    }
                }
            }
        }
        Err(BackendError::Unreachable { attempts, detail: last })
    }
}
