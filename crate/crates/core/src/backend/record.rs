use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use tracing::warn;

use super::{BackendError, ChatBackend, ChatReply, ChatRequest, Purpose};
use crate::trace::{ExchangeRecord, TraceRecord, TraceSink};

/// Appends every request and its reply (or error) to the run trace.
pub struct RecordingBackend {
    inner: Arc<dyn ChatBackend>,
    sink: TraceSink,
    seq: AtomicU64,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn ChatBackend>, sink: TraceSink) -> Self {
        Self { inner, sink, seq: AtomicU64::new(0) }
    }
}

impl ChatBackend for RecordingBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        let result = self.inner.complete(request);
        let seq = self.seq.fetch_add(1, Ordering::SeqCst) + 1;
        let record = ExchangeRecord {
            seq,
            purpose: request.purpose,
            request: request.clone(),
            reply: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(|e| e.to_string()),
        };
        if let Err(e) = self.sink.write(&TraceRecord::Exchange(record)) {
            warn!("failed to record exchange {seq}: {e}");
        }
        result
    }
}

/// Serves the replies of a recorded trace, in order.
pub struct ReplayBackend {
    exchanges: Vec<(Purpose, Result<ChatReply, String>)>,
    position: Mutex<usize>,
}

impl ReplayBackend {
    pub fn from_records(records: &[TraceRecord]) -> Self {
        let exchanges = records
            .iter()
            .filter_map(|r| match r {
                TraceRecord::Exchange(x) => Some((
                    x.purpose,
                    match (&x.reply, &x.error) {
                        (Some(reply), _) => Ok(reply.clone()),
                        (None, Some(e)) => Err(e.clone()),
                        (None, None) => Err("recorded exchange has neither reply nor error".to_string()),
                    },
                )),
                _ => None,
            })
            .collect();
        Self { exchanges, position: Mutex::new(0) }
    }

    pub fn remaining(&self) -> usize {
        self.exchanges.len() - *self.position.lock().expect("replay lock")
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        let mut pos = self.position.lock().expect("replay lock");
        let Some((purpose, result)) = self.exchanges.get(*pos) else {
            return Err(BackendError::ReplayDivergence {
                position: *pos + 1,
                detail: format!("no recorded reply left for a {} request", request.purpose),
            });
        };
        if *purpose != request.purpose {
            return Err(BackendError::ReplayDivergence {
                position: *pos + 1,
                detail: format!("recorded purpose {purpose}, replay requested {}", request.purpose),
            });
        }
        *pos += 1;
        result.clone().map_err(BackendError::Replayed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ChatMessage, FixtureEntry, Sampling, ScriptedBackend};

    fn req(purpose: Purpose) -> ChatRequest {
        ChatRequest::new(purpose, vec![ChatMessage::user("q")], Sampling::default())
    }

    #[test]
    fn record_then_replay_is_identical() {
        let scripted = ScriptedBackend::new(vec![
            FixtureEntry::text(Purpose::Planning, 1, "one"),
            FixtureEntry::text(Purpose::Memory, 1, "two"),
        ])
        .unwrap();
        let sink = TraceSink::memory();
        let rec = RecordingBackend::new(Arc::new(scripted), sink.clone());
        let live: Vec<_> = [Purpose::Planning, Purpose::Memory, Purpose::Planning]
            .iter()
            .map(|p| rec.complete(&req(*p)))
            .collect();
        assert!(live[2].is_err());

        let replay = ReplayBackend::from_records(&sink.records());
        let again: Vec<_> = [Purpose::Planning, Purpose::Memory, Purpose::Planning]
            .iter()
            .map(|p| replay.complete(&req(*p)))
            .collect();
        assert_eq!(live[0], again[0]);
        assert_eq!(live[1], again[1]);
        assert_eq!(again[2].as_ref().unwrap_err().to_string(), live[2].as_ref().unwrap_err().to_string());
        assert_eq!(replay.remaining(), 0);
    }

    #[test]
    fn purpose_mismatch_diverges() {
        let sink = TraceSink::memory();
        let rec = RecordingBackend::new(
            Arc::new(ScriptedBackend::new(vec![FixtureEntry::fallback(Purpose::Planning, "x")]).unwrap()),
            sink.clone(),
        );
        rec.complete(&req(Purpose::Planning)).unwrap();
        let replay = ReplayBackend::from_records(&sink.records());
        assert!(matches!(replay.complete(&req(Purpose::Memory)), Err(BackendError::ReplayDivergence { position: 1, .. })));
    }
}
