//! JSONL run traces.
//!
//! Each line is one JSON object with a `kind` field:
//!
//! | kind       | written                                                     |
//! |------------|-------------------------------------------------------------|
//! | `run`      | once, first: query and resolved configuration               |
//! | `exchange` | per backend call: purpose, request, reply or error           |
//! | `round`    | per main-agent round: the round and the context it produced |
//! | `memory`   | after every memory update: the full memory list             |
//! | `anomaly`  | per supervisor detection: signal, recovery outcome          |
//! | `subagent` | per sub-agent step: agent name, step number, step detail    |
//! | `final`    | once, last: the final report and final context              |
//!
//! Field names are part of the file format and only change with a major
//! version.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::FinalReport;
use crate::backend::{ChatReply, ChatRequest, Purpose};
use crate::config::Config;
use crate::memory::{ContextState, ContextSummary};
use crate::supervisor::{AnomalySignal, RecoveryOutcome};
use crate::trajectory::{MemoryList, Round, RoundIndex, UserQuery};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub query: UserQuery,
    pub config: Config,
    pub started_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRecord {
    pub seq: u64,
    pub purpose: Purpose,
    pub request: ChatRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<ChatReply>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: Round,
    pub context: ContextSummary,
    pub tool_calls_used: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub after_round: RoundIndex,
    pub units: MemoryList,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum RecoveryResolution {
    Recovered,
    RecoveryFailed { detail: String },
    Aborted { detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub round: RoundIndex,
    pub signal: AnomalySignal,
    pub resolution: RecoveryResolution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<RecoveryOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubagentRecord {
    pub agent: String,
    pub step: u32,
    pub detail: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub report: FinalReport,
    pub context: ContextState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum TraceRecord {
    Run(RunHeader),
    Exchange(ExchangeRecord),
    Round(RoundRecord),
    Memory(MemoryRecord),
    Anomaly(AnomalyRecord),
    Subagent(SubagentRecord),
    Final(FinalRecord),
}

impl TraceRecord {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Run(_) => "run",
            Self::Exchange(_) => "exchange",
            Self::Round(_) => "round",
            Self::Memory(_) => "memory",
            Self::Anomaly(_) => "anomaly",
            Self::Subagent(_) => "subagent",
            Self::Final(_) => "final",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("trace io: {0}")]
    Io(#[from] io::Error),
    #[error("trace is incomplete: {0}")]
    Incomplete(String),
}

enum SinkTarget {
    File(BufWriter<File>),
    Memory(Vec<String>),
    Null,
}

/// Shared, append-only trace writer. Cloning yields another handle to the
/// same sink.
#[derive(Clone)]
pub struct TraceSink {
    target: Arc<Mutex<SinkTarget>>,
}

impl std::fmt::Debug for TraceSink {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TraceSink")
    }
}

impl TraceSink {
    pub fn memory() -> Self {
        Self { target: Arc::new(Mutex::new(SinkTarget::Memory(Vec::new()))) }
    }

    pub fn null() -> Self {
        Self { target: Arc::new(Mutex::new(SinkTarget::Null)) }
    }

    pub fn file(path: &Path) -> io::Result<Self> {
        let f = File::create(path)?;
        Ok(Self { target: Arc::new(Mutex::new(SinkTarget::File(BufWriter::new(f)))) })
    }

    pub fn write(&self, record: &TraceRecord) -> io::Result<()> {
        let line = serde_json::to_string(record).map_err(io::Error::other)?;
        let mut target = self.target.lock().expect("trace lock");
        match &mut *target {
            SinkTarget::File(w) => {
                w.write_all(line.as_bytes())?;
                w.write_all(b"\n")?;
                w.flush()
            }
            SinkTarget::Memory(lines) => {
                lines.push(line);
                Ok(())
            }
            SinkTarget::Null => Ok(()),
        }
    }

    /// Lines captured by a memory sink; empty for other sinks.
    pub fn lines(&self) -> Vec<String> {
        match &*self.target.lock().expect("trace lock") {
            SinkTarget::Memory(lines) => lines.clone(),
            _ => Vec::new(),
        }
    }

    pub fn records(&self) -> Vec<TraceRecord> {
        self.lines()
            .iter()
            .map(|l| serde_json::from_str(l).expect("sink lines are valid records"))
            .collect()
    }
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TraceError::Parse { line: i + 1, detail: e.to_string() })
        })
        .collect()
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    parse_trace(&std::fs::read_to_string(path)?)
}

const VOLATILE_KEYS: &[&str] = &["produced_at", "started_at", "elapsed_ms", "trace_ref"];

/// JSON form of a record with wall-clock fields removed, for comparing
/// traces modulo timestamps.
pub fn normalized(record: &TraceRecord) -> Value {
    let mut v = serde_json::to_value(record).expect("records serialize");
    strip_volatile(&mut v);
    v
}

fn strip_volatile(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for k in VOLATILE_KEYS {
                map.remove(*k);
            }
            map.values_mut().for_each(strip_volatile);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_volatile),
        _ => {}
    }
}

/// First position where two traces differ modulo timestamps, with a short
/// description.
pub fn first_divergence(expected: &[TraceRecord], actual: &[TraceRecord]) -> Option<(usize, String)> {
    for (i, (a, b)) in expected.iter().zip(actual).enumerate() {
        if normalized(a) != normalized(b) {
            return Some((i, format!("record {} (kind {}) differs from replayed kind {}", i + 1, a.kind(), b.kind())));
        }
    }
    if expected.len() != actual.len() {
        let n = expected.len().min(actual.len());
        return Some((n, format!("recorded {} records, replay produced {}", expected.len(), actual.len())));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn strip_volatile_is_recursive() {
        let mut v = json!({"a": {"produced_at": 1, "b": [{"elapsed_ms": 2, "c": 3}]}, "started_at": 0});
        strip_volatile(&mut v);
        assert_eq!(v, json!({"a": {"b": [{"c": 3}]}}));
    }

    #[test]
    fn parse_error_names_line() {
        let err = parse_trace("\n{not json}").unwrap_err();
        assert!(matches!(err, TraceError::Parse { line: 2, .. }));
    }

    #[test]
    fn memory_sink_round_trips() {
        let sink = TraceSink::memory();
        let rec = TraceRecord::Subagent(SubagentRecord { agent: "browser".into(), step: 1, detail: json!({"x": 1}) });
        sink.write(&rec).unwrap();
        assert_eq!(sink.records(), vec![rec.clone()]);
        assert!(sink.lines()[0].starts_with(r#"{"kind":"subagent""#));
        assert_eq!(first_divergence(std::slice::from_ref(&rec), std::slice::from_ref(&rec)), None);
    }
}
