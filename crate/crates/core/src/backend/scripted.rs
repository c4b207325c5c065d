use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatReply, ChatRequest, Purpose, StructuredCall};

/// One line of a scripted fixture file.
///
/// Replies are keyed by `(phase, purpose, index)`. `index` counts calls of
/// one purpose within a phase, starting at 1; an entry without an index is
/// the fallback for every call of that purpose in that phase. The phase
/// starts at 0 and advances each time a `supervisor_regen` reply is served,
/// which lets a fixture change behavior after a supervisor intervention.
/// A purpose with no entry in the current phase uses its phase-0 fallback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    pub purpose: Purpose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<u32>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub phase: u32,
    #[serde(default)]
    pub reply_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured_call: Option<StructuredCall>,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl FixtureEntry {
    pub fn text(purpose: Purpose, index: u32, reply_text: impl Into<String>) -> Self {
        Self { purpose, index: Some(index), phase: 0, reply_text: reply_text.into(), structured_call: None }
    }

    pub fn fallback(purpose: Purpose, reply_text: impl Into<String>) -> Self {
        Self { purpose, index: None, phase: 0, reply_text: reply_text.into(), structured_call: None }
    }

    pub fn in_phase(mut self, phase: u32) -> Self {
        self.phase = phase;
        self
    }

    fn reply(&self) -> ChatReply {
        ChatReply { text: self.reply_text.clone(), structured_call: self.structured_call.clone(), usage: None }
    }
}

#[derive(Debug, Default)]
struct Cursor {
    phase: u32,
    counters: HashMap<(u32, Purpose), u32>,
}

/// Deterministic backend that answers from a fixture table. Counters are
/// owned by the instance, so use one instance per run.
#[derive(Debug)]
pub struct ScriptedBackend {
    exact: HashMap<(u32, Purpose, u32), FixtureEntry>,
    fallback: HashMap<(u32, Purpose), FixtureEntry>,
    cursor: Mutex<Cursor>,
}

impl ScriptedBackend {
    pub fn new(entries: impl IntoIterator<Item = FixtureEntry>) -> Result<Self, BackendError> {
        let mut exact = HashMap::new();
        let mut fallback = HashMap::new();
        for e in entries {
            let dup = match e.index {
                Some(0) => return Err(BackendError::Fixture(format!("{} entry uses index 0; indices start at 1", e.purpose))),
                Some(i) => exact.insert((e.phase, e.purpose, i), e.clone()).is_some(),
                None => fallback.insert((e.phase, e.purpose), e.clone()).is_some(),
            };
            if dup {
                return Err(BackendError::Fixture(format!(
                    "duplicate fixture entry for purpose {} index {:?} phase {}",
                    e.purpose, e.index, e.phase
                )));
            }
        }
        Ok(Self { exact, fallback, cursor: Mutex::new(Cursor::default()) })
    }

    pub fn from_jsonl(text: &str) -> Result<Self, BackendError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry = serde_json::from_str(line)
                .map_err(|e| BackendError::Fixture(format!("line {}: {e}", n + 1)))?;
            entries.push(entry);
        }
        Self::new(entries)
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    pub fn phase(&self) -> u32 {
        self.cursor.lock().expect("cursor lock").phase
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        request.validate()?;
        let mut cursor = self.cursor.lock().expect("cursor lock");
        let phase = cursor.phase;
        let counter = cursor.counters.entry((phase, request.purpose)).or_insert(0);
        *counter += 1;
        let n = *counter;
        let entry = self
            .exact
            .get(&(phase, request.purpose, n))
            .or_else(|| self.fallback.get(&(phase, request.purpose)))
            .or_else(|| self.fallback.get(&(0, request.purpose)))
            .ok_or(BackendError::FixtureUnderflow { purpose: request.purpose, counter: n })?;
        if request.purpose == Purpose::SupervisorRegen {
            cursor.phase += 1;
        }
        Ok(entry.reply())
    }
}
