//! The main research loop.

mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

pub use parse::{parse_agent_response, ANSWER_CLOSE, ANSWER_OPEN, CALL_CLOSE, CALL_OPEN};

use crate::backend::{ChatBackend, ChatMessage, ChatRequest, Purpose, RecordingBackend};
use crate::config::Config;
use crate::memory::{
    apply_memory_update, build_context, build_context_unmanaged, memory_step, ContextMode, ContextState,
};
use crate::pool::{InvocationContext, Registry};
use crate::supervisor::{inspect, inspection_window, interrupt_and_recover, AnomalyKind, AnomalySignal, RecoveryFailure};
use crate::trace::{
    AnomalyRecord, FinalRecord, MemoryRecord, RecoveryResolution, RoundRecord, RunHeader, TraceError, TraceRecord,
    TraceSink,
};
use crate::trajectory::{
    render_memory, MemoryList, Observation, ObservationStatus, ResponseAction, Round, RoundIndex, UserQuery,
};

pub const NO_ANSWER: &str = "no answer";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Finished,
    BudgetExhausted,
    Aborted,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Finished => 0,
            RunStatus::BudgetExhausted => 2,
            RunStatus::Aborted => 3,
            RunStatus::Running => 1,
        }
    }
}

/// Everything the loop knows about one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub query: UserQuery,
    pub rounds: Vec<Round>,
    pub memory: MemoryList,
    pub context: ContextState,
    pub tool_calls_used: u32,
    pub status: RunStatus,
    /// Rounds removed from the context by supervisor recovery.
    pub pruned: BTreeSet<RoundIndex>,
    pub recovery_attempts: BTreeMap<AnomalyKind, u32>,
    /// Regenerated plan, injected into the next planning call only.
    pub guidance: Option<String>,
}

impl RunState {
    pub fn new(query: UserQuery, context: ContextState) -> Self {
        Self {
            query,
            rounds: Vec::new(),
            memory: MemoryList::default(),
            context,
            tool_calls_used: 0,
            status: RunStatus::Running,
            pruned: BTreeSet::new(),
            recovery_attempts: BTreeMap::new(),
            guidance: None,
        }
    }

    /// Rebuilds the final state of a run from its complete trace.
    pub fn from_trace(records: &[TraceRecord]) -> Result<Self, TraceError> {
        let header = records
            .iter()
            .find_map(|r| match r {
                TraceRecord::Run(h) => Some(h),
                _ => None,
            })
            .ok_or_else(|| TraceError::Incomplete("no run record".into()))?;
        let last = records
            .iter()
            .rev()
            .find_map(|r| match r {
                TraceRecord::Final(f) => Some(f),
                _ => None,
            })
            .ok_or_else(|| TraceError::Incomplete("no final record".into()))?;
        let mut state = RunState::new(header.query.clone(), last.context.clone());
        state.status = last.report.status;
        for record in records {
            match record {
                TraceRecord::Round(r) => {
                    state.rounds.push(r.round.clone());
                    state.tool_calls_used = r.tool_calls_used;
                }
                TraceRecord::Memory(m) => state.memory = m.units.clone(),
                TraceRecord::Anomaly(a) => {
                    if !matches!(a.resolution, RecoveryResolution::Aborted { .. }) {
                        *state.recovery_attempts.entry(a.signal.kind).or_insert(0) += 1;
                    }
                    if let Some(outcome) = &a.outcome {
                        state.pruned.extend(outcome.pruned_rounds.iter().copied());
                        state.guidance = Some(outcome.guidance.clone());
                    }
                }
                TraceRecord::Exchange(x) if x.purpose == Purpose::Planning => state.guidance = None,
                _ => {}
            }
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub rounds: u32,
    pub tool_calls: u32,
    /// Planner contexts rebuilt from memory (one per opened sub-goal).
    pub resets: u32,
    pub anomalies: u32,
    pub elapsed_ms: u64,
    /// The answer came from a post-budget synthesis call.
    #[serde(default)]
    pub best_effort: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalReport {
    pub status: RunStatus,
    pub answer: String,
    pub trace_ref: String,
    pub stats: RunStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: FinalReport,
    pub state: RunState,
}

const PREAMBLE_HEAD: &str = "You are a deep research agent. Work in rounds: think briefly, then either call \
exactly one capability or give the final answer.\n\
To call a capability, write <tool_call>{\"name\": \"<capability>\", \"arguments\": {...}}</tool_call>.\n\
To finish, write <answer>your final answer</answer>.\n\
Each observation is returned to you as a message. Long tasks are split into sub-goals; completed sub-goals \
are summarized for you.\n\nCapabilities:\n";

const BEST_EFFORT_REQUEST: &str = "The research budget is exhausted and no more capabilities can be called. \
Using only the information above, give your best final answer now inside <answer></answer>.";

pub fn system_preamble(registry: &Registry) -> String {
    format!("{PREAMBLE_HEAD}{}", registry.render_capability_prompt())
}

/// Runs queries against a fixed configuration, registry and backend.
pub struct Agent {
    config: Config,
    registry: Arc<Registry>,
    backend: Arc<dyn ChatBackend>,
}

struct Counters {
    resets: u32,
    anomalies: u32,
    diagnostic: Option<String>,
    answer: Option<String>,
}

impl Agent {
    pub fn new(config: Config, registry: Arc<Registry>, backend: Arc<dyn ChatBackend>) -> Self {
        Self { config, registry, backend }
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    /// Executes one query to completion, writing the full trace to `trace`.
    pub fn run(&self, query: UserQuery, trace: TraceSink, trace_ref: impl Into<String>) -> RunOutcome {
        let started = Instant::now();
        let cfg = &self.config;
        let budget = cfg.budget.to_budget();
        let sampling = cfg.sampling;
        let preamble = system_preamble(&self.registry);
        let backend: Arc<dyn ChatBackend> = Arc::new(RecordingBackend::new(Arc::clone(&self.backend), trace.clone()));

        emit(
            &trace,
            TraceRecord::Run(RunHeader { query: query.clone(), config: cfg.clone(), started_at: chrono::Utc::now() }),
        );
        let ctx = InvocationContext {
            backend: Arc::clone(&backend),
            trace: trace.clone(),
            sampling,
            max_subagent_steps: budget.max_subagent_steps,
            query: Arc::new(query.clone()),
        };
        let mut state = RunState::new(query.clone(), ContextState::initial(&preamble, &query));
        let mut n = Counters { resets: 0, anomalies: 0, diagnostic: None, answer: None };
        let tools = self.registry.tool_schemas();

        while state.status == RunStatus::Running {
            let elapsed = started.elapsed();
            if elapsed >= budget.max_wall_clock {
                state.status = RunStatus::BudgetExhausted;
                n.diagnostic = Some(format!("wall-clock budget of {} s reached", budget.max_wall_clock.as_secs()));
                break;
            }
            let index = state.rounds.len() as RoundIndex + 1;

            let mut messages = state.context.to_chat();
            if let Some(g) = state.guidance.take() {
                messages.push(ChatMessage::user(format!("Supervisor guidance: {g}")));
            }
            let request = ChatRequest::new(Purpose::Planning, messages, sampling).with_tools(tools.clone());
            let reply = match backend.complete(&request) {
                Ok(r) => r,
                Err(e) => {
                    state.status = RunStatus::Aborted;
                    n.diagnostic = Some(format!("backend failure at round {index}: {e}"));
                    break;
                }
            };
            let response = parse_agent_response(&reply);
            if let Some(note) = &response.note {
                info!(round = index, "{note}");
            }

            if let Some(answer) = response.final_answer() {
                n.answer = Some(answer.to_string());
                let round = Round { index, response, observation: None };
                self.absorb_round(&mut state, round, &preamble, &*backend, &trace, &mut n);
                if state.status == RunStatus::Running {
                    state.status = RunStatus::Finished;
                }
                break;
            }

            let mut pending = Round { index, response, observation: None };
            let mut fired_early = false;
            if cfg.supervisor.enabled {
                if let Some(signal) = inspect(std::slice::from_ref(&pending), &cfg.supervisor) {
                    fired_early = true;
                    state = self.recover(state, &signal, Some(&pending), &*backend, &trace, &mut n, index);
                    if state.status == RunStatus::Aborted {
                        break;
                    }
                }
            }

            let observation = match &pending.response.action {
                ResponseAction::Invoke { invocation } => {
                    if state.tool_calls_used >= budget.max_tool_calls {
                        state.status = RunStatus::BudgetExhausted;
                        n.diagnostic = Some(format!("tool-call budget of {} reached", budget.max_tool_calls));
                        break;
                    }
                    let remaining = budget.max_wall_clock.saturating_sub(started.elapsed()).max(Duration::from_millis(1));
                    let result = self.registry.dispatch(invocation, remaining, &ctx);
                    state.tool_calls_used += result.tool_calls_consumed;
                    result.observation
                }
                ResponseAction::Malformed { reason } => Observation::failure(ObservationStatus::ParseError, reason.clone()),
                ResponseAction::Answer { .. } => unreachable!("answers are handled above"),
            };
            pending.observation = Some(observation);
            self.absorb_round_checked(&mut state, pending, &preamble, &*backend, &trace, &mut n, !fired_early);
        }

        let report = self.synthesize_final(&mut state, &preamble, &*backend, n, started, trace_ref.into());
        emit(&trace, TraceRecord::Final(FinalRecord { report: report.clone(), context: state.context.clone() }));
        RunOutcome { report, state }
    }

    fn absorb_round(
        &self,
        state: &mut RunState,
        round: Round,
        preamble: &str,
        backend: &dyn ChatBackend,
        trace: &TraceSink,
        n: &mut Counters,
    ) {
        self.absorb_round_checked(state, round, preamble, backend, trace, n, false)
    }

    /// Memory update, optional post-observation inspection, context rebuild
    /// and the round trace record.
    #[allow(clippy::too_many_arguments)]
    fn absorb_round_checked(
        &self,
        state: &mut RunState,
        round: Round,
        preamble: &str,
        backend: &dyn ChatBackend,
        trace: &TraceSink,
        n: &mut Counters,
        inspect_after: bool,
    ) {
        let cfg = &self.config;
        let index = round.index;
        if cfg.memory.enabled {
            let outcome = memory_step(&round, state.memory.last(), backend, &cfg.memory, cfg.sampling);
            let memory = std::mem::take(&mut state.memory);
            state.memory = apply_memory_update(memory, outcome).expect("memory step folds only into an existing unit");
        }
        state.rounds.push(round);
        if cfg.memory.enabled {
            emit(trace, TraceRecord::Memory(MemoryRecord { after_round: index, units: state.memory.clone() }));
        }

        if inspect_after && cfg.supervisor.enabled {
            let window = inspection_window(state, None, cfg.supervisor.window);
            if let Some(signal) = inspect(&window, &cfg.supervisor) {
                let taken = std::mem::replace(state, RunState::new(state.query.clone(), state.context.clone()));
                *state = self.recover(taken, &signal, None, backend, trace, n, index);
            }
        }

        let latest = state.rounds.last().expect("round was just pushed");
        state.context = if cfg.memory.enabled {
            build_context(preamble, &state.query, &state.memory, Some(&state.context), latest, &state.pruned)
                .expect("memory covers the latest round")
        } else {
            build_context_unmanaged(&state.context, latest, &state.pruned)
        };
        if cfg.memory.enabled && state.context.mode == ContextMode::Reset {
            n.resets += 1;
        }
        emit(
            trace,
            TraceRecord::Round(RoundRecord {
                round: latest.clone(),
                context: state.context.summary(),
                tool_calls_used: state.tool_calls_used,
            }),
        );
    }

    #[allow(clippy::too_many_arguments)]
    fn recover(
        &self,
        state: RunState,
        signal: &AnomalySignal,
        pending: Option<&Round>,
        backend: &dyn ChatBackend,
        trace: &TraceSink,
        n: &mut Counters,
        round: RoundIndex,
    ) -> RunState {
        n.anomalies += 1;
        warn!(round, kind = ?signal.kind, "anomaly detected");
        let (state, result) =
            interrupt_and_recover(state, signal, pending, backend, &self.config.supervisor, self.config.sampling);
        let (resolution, outcome) = match result {
            Ok(outcome) => (RecoveryResolution::Recovered, Some(outcome)),
            Err(RecoveryFailure::AttemptsExhausted { kind, attempts }) => {
                let detail = format!("recovery from {kind:?} failed {attempts} times; aborting");
                n.diagnostic = Some(detail.clone());
                (RecoveryResolution::Aborted { detail }, None)
            }
            Err(e) => (RecoveryResolution::RecoveryFailed { detail: e.to_string() }, None),
        };
        emit(trace, TraceRecord::Anomaly(AnomalyRecord { round, signal: signal.clone(), resolution, outcome }));
        state
    }

    /// Produces the report for a terminated run. A run stopped by a budget
    /// gets one extra backend call over a reset-style context.
    fn synthesize_final(
        &self,
        state: &mut RunState,
        preamble: &str,
        backend: &dyn ChatBackend,
        n: Counters,
        started: Instant,
        trace_ref: String,
    ) -> FinalReport {
        let mut best_effort = false;
        let answer = match state.status {
            RunStatus::Finished => n.answer.unwrap_or_default(),
            RunStatus::BudgetExhausted => {
                best_effort = true;
                let mut messages = ContextState::initial(preamble, &state.query).to_chat();
                if !state.memory.is_empty() {
                    messages.push(ChatMessage::user(format!("Sub-goals so far:\n{}", render_memory(&state.memory))));
                }
                messages.push(ChatMessage::user(BEST_EFFORT_REQUEST));
                let request = ChatRequest::new(Purpose::Synthesis, messages, self.config.sampling);
                match backend.complete(&request) {
                    Ok(reply) => {
                        let parsed = parse_agent_response(&reply);
                        match parsed.final_answer() {
                            Some(a) => a.trim().to_string(),
                            None if !reply.text.trim().is_empty() => reply.text.trim().to_string(),
                            None => NO_ANSWER.to_string(),
                        }
                    }
                    Err(e) => {
                        warn!("best-effort synthesis failed: {e}");
                        NO_ANSWER.to_string()
                    }
                }
            }
            RunStatus::Aborted | RunStatus::Running => NO_ANSWER.to_string(),
        };
        FinalReport {
            status: state.status,
            answer,
            trace_ref,
            stats: RunStats {
                rounds: state.rounds.len() as u32,
                tool_calls: state.tool_calls_used,
                resets: n.resets,
                anomalies: n.anomalies,
                elapsed_ms: started.elapsed().as_millis() as u64,
                best_effort,
            },
            diagnostic: n.diagnostic,
        }
    }
}

fn emit(trace: &TraceSink, record: TraceRecord) {
    if let Err(e) = trace.write(&record) {
        warn!("failed to write {} record: {e}", record.kind());
    }
}
