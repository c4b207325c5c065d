//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use delve_core::backend::{ChatBackend, FixtureEntry, Purpose, ScriptedBackend};
use delve_core::pool::{
    CapabilityDescriptor, CapabilityHandler, CapabilityKind, CostHint, InvocationContext, ParamType, ParameterSpec,
    Registry, ToolFailure,
};
use delve_core::trace::{TraceRecord, TraceSink};
use delve_core::trajectory::{Arguments, Attachment, UserQuery};
use delve_core::{Agent, Config, RunOutcome};
use serde_json::{json, Value};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").canonicalize().expect("fixtures directory")
}

pub fn fixture(rel: &str) -> PathBuf {
    fixtures().join(rel)
}

pub fn call(reasoning: &str, name: &str, arguments: Value) -> String {
    format!("{reasoning}\n<tool_call>{}</tool_call>", json!({ "name": name, "arguments": arguments }))
}

pub fn answer(text: &str) -> String {
    format!("Done.\n<answer>{text}</answer>")
}

pub fn mem(same: bool, goal: &str, summary: &str) -> String {
    json!({ "same_sub_goal": same, "sub_goal": goal, "new_summary": summary }).to_string()
}

pub fn plan(index: u32, text: impl Into<String>) -> FixtureEntry {
    FixtureEntry::text(Purpose::Planning, index, text)
}

pub fn memory(index: u32, text: impl Into<String>) -> FixtureEntry {
    FixtureEntry::text(Purpose::Memory, index, text)
}

pub fn scripted(entries: Vec<FixtureEntry>) -> Arc<dyn ChatBackend> {
    Arc::new(ScriptedBackend::new(entries).expect("valid fixture"))
}

/// Deterministic basic tool: `lookup(query)` answers `facts about <query>`.
pub struct Lookup;

impl CapabilityHandler for Lookup {
    fn invoke(&self, args: &Arguments, _ctx: &InvocationContext) -> Result<String, ToolFailure> {
        let q = args.get("query").and_then(Value::as_str).unwrap_or_default();
        Ok(format!("facts about {q}"))
    }
}

pub fn lookup_descriptor() -> CapabilityDescriptor {
    CapabilityDescriptor {
        name: "lookup".into(),
        kind: CapabilityKind::BasicTool,
        description: "Look up facts.".into(),
        parameters: vec![ParameterSpec::required("query", ParamType::String, "what to look up")],
        cost_hint: CostHint::LowLatency,
    }
}

pub fn lookup_registry(config: &Config) -> Registry {
    let mut r = Registry::new(config.timeouts, config.observation_cap);
    r.register(lookup_descriptor(), Arc::new(Lookup)).unwrap();
    r
}

pub fn query(text: &str) -> UserQuery {
    UserQuery::new(text, vec![]).unwrap()
}

pub fn query_with(text: &str, files: &[PathBuf]) -> UserQuery {
    UserQuery::new(text, files.iter().cloned().map(Attachment::from_path).collect()).unwrap()
}

pub fn run(config: Config, registry: Registry, backend: Arc<dyn ChatBackend>, q: UserQuery) -> (RunOutcome, Vec<TraceRecord>) {
    let sink = TraceSink::memory();
    let outcome = Agent::new(config, Arc::new(registry), backend).run(q, sink.clone(), "memory");
    (outcome, sink.records())
}

/// Runs with the `lookup` tool only.
pub fn run_lookup(config: Config, entries: Vec<FixtureEntry>, q: &str) -> (RunOutcome, Vec<TraceRecord>) {
    let registry = lookup_registry(&config);
    run(config, registry, scripted(entries), query(q))
}

/// Text of every planning request, in call order.
pub fn planning_inputs(records: &[TraceRecord]) -> Vec<String> {
    records
        .iter()
        .filter_map(|r| match r {
            TraceRecord::Exchange(x) if x.purpose == Purpose::Planning => {
                Some(x.request.messages.iter().map(|m| m.text.as_str()).collect::<Vec<_>>().join("\n"))
            }
            _ => None,
        })
        .collect()
}

pub fn rounds(records: &[TraceRecord]) -> Vec<&delve_core::trace::RoundRecord> {
    records
        .iter()
        .filter_map(|r| match r {
            TraceRecord::Round(rr) => Some(rr),
            _ => None,
        })
        .collect()
}

pub fn subagent_steps<'a>(records: &'a [TraceRecord], agent: &str) -> Vec<&'a delve_core::trace::SubagentRecord> {
    records
        .iter()
        .filter_map(|r| match r {
            TraceRecord::Subagent(s) if s.agent == agent => Some(s),
            _ => None,
        })
        .collect()
}
