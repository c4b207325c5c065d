//! The capability pool: one registry for basic tools and sub-agents, one
//! dispatch path. Routing is the planner's job; the pool only validates
//! arguments, runs the handler under a timeout and wraps the outcome in an
//! [`Observation`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::{ChatBackend, Sampling, ToolSchema};
use crate::trace::TraceSink;
use crate::trajectory::{Arguments, Observation, ObservationStatus, ToolInvocation, UserQuery};

pub const UNKNOWN_CAPABILITY: &str = "unknown capability";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapabilityKind {
    BasicTool,
    SubAgent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostHint {
    LowLatency,
    LongHorizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Integer,
    Number,
    Boolean,
    StringList,
}

impl ParamType {
    fn as_str(self) -> &'static str {
        match self {
            Self::String => "string",
            Self::Integer => "integer",
            Self::Number => "number",
            Self::Boolean => "boolean",
            Self::StringList => "list of strings",
        }
    }

    fn json_schema(self) -> Value {
        match self {
            Self::String => json!({"type": "string"}),
            Self::Integer => json!({"type": "integer"}),
            Self::Number => json!({"type": "number"}),
            Self::Boolean => json!({"type": "boolean"}),
            Self::StringList => json!({"type": "array", "items": {"type": "string"}}),
        }
    }

    fn accepts(self, v: &Value) -> bool {
        match self {
            Self::String => v.is_string(),
            Self::Integer => v.is_i64() || v.is_u64(),
            Self::Number => v.is_number(),
            Self::Boolean => v.is_boolean(),
            Self::StringList => v.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
    pub required: bool,
    pub description: String,
}

impl ParameterSpec {
    pub fn required(name: &str, ty: ParamType, description: &str) -> Self {
        Self { name: name.into(), ty, required: true, description: description.into() }
    }

    pub fn optional(name: &str, ty: ParamType, description: &str) -> Self {
        Self { name: name.into(), ty, required: false, description: description.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityDescriptor {
    pub name: String,
    pub kind: CapabilityKind,
    pub description: String,
    pub parameters: Vec<ParameterSpec>,
    pub cost_hint: CostHint,
}

impl CapabilityDescriptor {
    pub fn to_tool_schema(&self) -> ToolSchema {
        let properties: serde_json::Map<String, Value> = self
            .parameters
            .iter()
            .map(|p| {
                let mut schema = p.ty.json_schema();
                schema["description"] = Value::String(p.description.clone());
                (p.name.clone(), schema)
            })
            .collect();
        let required: Vec<&str> = self.parameters.iter().filter(|p| p.required).map(|p| p.name.as_str()).collect();
        ToolSchema {
            name: self.name.clone(),
            description: self.description.clone(),
            parameters: json!({ "type": "object", "properties": properties, "required": required }),
        }
    }

    /// Checks arguments against the parameter list; the error names the
    /// offending parameter.
    pub fn validate_arguments(&self, args: &Arguments) -> Result<(), String> {
        for p in &self.parameters {
            match args.get(&p.name) {
                None | Some(Value::Null) if p.required => {
                    return Err(format!("missing required parameter '{}'", p.name));
                }
                None | Some(Value::Null) => {}
                Some(v) if !p.ty.accepts(v) => {
                    return Err(format!("parameter '{}' expects {}", p.name, p.ty.as_str()));
                }
                Some(Value::String(s)) if p.required && s.trim().is_empty() => {
                    return Err(format!("parameter '{}' must not be empty", p.name));
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = args.keys().find(|k| !self.parameters.iter().any(|p| &p.name == *k)) {
            return Err(format!("unknown parameter '{extra}'"));
        }
        Ok(())
    }
}

/// Failure reported by a handler; mapped to a non-ok observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolFailure {
    pub status: ObservationStatus,
    pub detail: String,
    /// Payload to show instead of the default `status: detail` line.
    pub payload: Option<String>,
}

impl ToolFailure {
    pub fn tool_error(detail: impl Into<String>) -> Self {
        Self { status: ObservationStatus::ToolError, detail: detail.into(), payload: None }
    }

    pub fn parse_error(detail: impl Into<String>) -> Self {
        Self { status: ObservationStatus::ParseError, detail: detail.into(), payload: None }
    }

    pub fn with_payload(mut self, payload: impl Into<String>) -> Self {
        self.payload = Some(payload.into());
        self
    }

    fn into_observation(self) -> Observation {
        let obs = Observation::failure(self.status, self.detail);
        match self.payload {
            Some(p) => obs.with_payload(p),
            None => obs,
        }
    }
}

/// What a handler can reach while it runs.
#[derive(Clone)]
pub struct InvocationContext {
    pub backend: Arc<dyn ChatBackend>,
    pub trace: TraceSink,
    pub sampling: Sampling,
    pub max_subagent_steps: u32,
    pub query: Arc<UserQuery>,
}

pub trait CapabilityHandler: Send + Sync {
    fn invoke(&self, args: &Arguments, ctx: &InvocationContext) -> Result<String, ToolFailure>;
}

impl<F> CapabilityHandler for F
where
    F: Fn(&Arguments, &InvocationContext) -> Result<String, ToolFailure> + Send + Sync,
{
    fn invoke(&self, args: &Arguments, ctx: &InvocationContext) -> Result<String, ToolFailure> {
        self(args, ctx)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PoolError {
    #[error("capability '{0}' is already registered")]
    Duplicate(String),
    #[error("invalid descriptor for '{name}': {detail}")]
    InvalidDescriptor { name: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DispatchTimeouts {
    pub basic_tool_secs: u64,
    pub subagent_secs: u64,
}

impl Default for DispatchTimeouts {
    fn default() -> Self {
        Self { basic_tool_secs: 120, subagent_secs: 20 * 60 }
    }
}

#[derive(Debug, Clone)]
pub struct DispatchResult {
    pub observation: Observation,
    pub tool_calls_consumed: u32,
    pub elapsed: Duration,
}

struct Entry {
    descriptor: CapabilityDescriptor,
    handler: Arc<dyn CapabilityHandler>,
}

pub struct Registry {
    entries: BTreeMap<String, Entry>,
    timeouts: DispatchTimeouts,
    observation_cap: usize,
}

impl Default for Registry {
    fn default() -> Self {
        Self::new(DispatchTimeouts::default(), 20_000)
    }
}

impl Registry {
    pub fn new(timeouts: DispatchTimeouts, observation_cap: usize) -> Self {
        Self { entries: BTreeMap::new(), timeouts, observation_cap }
    }

    pub fn register(
        &mut self,
        descriptor: CapabilityDescriptor,
        handler: Arc<dyn CapabilityHandler>,
    ) -> Result<(), PoolError> {
        if descriptor.name.trim().is_empty() {
            return Err(PoolError::InvalidDescriptor { name: descriptor.name, detail: "empty name".into() });
        }
        let mut names = BTreeSet::new();
        if let Some(dup) = descriptor.parameters.iter().find(|p| !names.insert(&p.name)) {
            return Err(PoolError::InvalidDescriptor {
                name: descriptor.name.clone(),
                detail: format!("parameter '{}' listed twice", dup.name),
            });
        }
        if self.entries.contains_key(&descriptor.name) {
            return Err(PoolError::Duplicate(descriptor.name));
        }
        self.entries.insert(descriptor.name.clone(), Entry { descriptor, handler });
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn descriptor(&self, name: &str) -> Option<&CapabilityDescriptor> {
        self.entries.get(name).map(|e| &e.descriptor)
    }

    pub fn tool_schemas(&self) -> Vec<ToolSchema> {
        self.entries.values().map(|e| e.descriptor.to_tool_schema()).collect()
    }

    /// Validates and runs one invocation. Every failure comes back as a
    /// non-ok observation. `remaining_wall_clock` caps the per-call timeout.
    pub fn dispatch(
        &self,
        invocation: &ToolInvocation,
        remaining_wall_clock: Duration,
        ctx: &InvocationContext,
    ) -> DispatchResult {
        let started = Instant::now();
        let observation = self.run(invocation, remaining_wall_clock, ctx).clipped(self.observation_cap);
        DispatchResult { observation, tool_calls_consumed: 1, elapsed: started.elapsed() }
    }

    fn run(&self, invocation: &ToolInvocation, remaining: Duration, ctx: &InvocationContext) -> Observation {
        let Some(entry) = self.entries.get(&invocation.capability_name) else {
            return Observation::failure(
                ObservationStatus::ToolError,
                format!("{UNKNOWN_CAPABILITY} '{}'", invocation.capability_name),
            );
        };
        if let Err(detail) = entry.descriptor.validate_arguments(&invocation.arguments) {
            return Observation::failure(ObservationStatus::ParseError, detail);
        }
        let limit = match entry.descriptor.kind {
            CapabilityKind::BasicTool => Duration::from_secs(self.timeouts.basic_tool_secs),
            CapabilityKind::SubAgent => Duration::from_secs(self.timeouts.subagent_secs),
        }
        .min(remaining);

        let (tx, rx) = mpsc::channel();
        let handler = Arc::clone(&entry.handler);
        let args = invocation.arguments.clone();
        let ctx = ctx.clone();
        std::thread::spawn(move || {
            let _ = tx.send(handler.invoke(&args, &ctx));
        });
        match rx.recv_timeout(limit) {
            Ok(Ok(payload)) => Observation::ok(payload),
            Ok(Err(failure)) => failure.into_observation(),
            Err(mpsc::RecvTimeoutError::Timeout) => Observation::failure(
                ObservationStatus::Timeout,
                format!("'{}' did not finish within {:.1} s", invocation.capability_name, limit.as_secs_f64()),
            ),
            Err(mpsc::RecvTimeoutError::Disconnected) => Observation::failure(
                ObservationStatus::ToolError,
                format!("'{}' handler terminated abnormally", invocation.capability_name),
            ),
        }
    }

    /// Deterministic listing of every capability, ordered by name.
    pub fn render_capability_prompt(&self) -> String {
        if self.entries.is_empty() {
            return "No capabilities are available; answer from your own knowledge.\n".to_string();
        }
        let mut out = String::from("Available capabilities:\n");
        for e in self.entries.values() {
            let d = &e.descriptor;
            let kind = match d.kind {
                CapabilityKind::BasicTool => "basic_tool",
                CapabilityKind::SubAgent => "sub_agent",
            };
            let cost = match d.cost_hint {
                CostHint::LowLatency => "low_latency",
                CostHint::LongHorizon => "long_horizon",
            };
            let _ = writeln!(out, "- {} [{kind}, {cost}]: {}", d.name, d.description);
            for p in &d.parameters {
                let req = if p.required { "required" } else { "optional" };
                let _ = writeln!(out, "    {} ({}, {req}): {}", p.name, p.ty.as_str(), p.description);
            }
        }
        out
    }
}
