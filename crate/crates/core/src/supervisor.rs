//! Trajectory supervision: rule-based anomaly detection plus a model-backed
//! recovery (diagnosis, pruning of the failed rounds, regenerated guidance).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::agent::{RunState, RunStatus};
use crate::backend::{ChatBackend, ChatMessage, ChatRequest, Purpose, Sampling};
use crate::memory::{render_observation, render_query};
use crate::pool::UNKNOWN_CAPABILITY;
use crate::trajectory::{render_units, Round, RoundIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    MalformedCall,
    UnknownCapability,
    RepeatedAction,
    RepeatedError,
    StagnantOutput,
}

impl AnomalyKind {
    fn describe(self) -> &'static str {
        match self {
            Self::MalformedCall => "the agent emitted a response that is neither a valid tool call nor a final answer",
            Self::UnknownCapability => "the agent called a capability that does not exist",
            Self::RepeatedAction => "the agent keeps repeating the same action",
            Self::RepeatedError => "the agent's recent actions keep failing",
            Self::StagnantOutput => "the agent keeps producing the same reasoning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalySignal {
    pub kind: AnomalyKind,
    pub evidence_rounds: Vec<RoundIndex>,
    pub first_detected_round: RoundIndex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryOutcome {
    pub diagnosis: String,
    pub pruned_rounds: Vec<RoundIndex>,
    pub regenerated: bool,
    pub attempts_used: u32,
    /// Regenerated guidance injected into the next planning call.
    pub guidance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupervisorConfig {
    pub enabled: bool,
    pub repeat_threshold: usize,
    pub error_threshold: usize,
    pub stagnation_threshold: usize,
    pub max_recovery_attempts: u32,
    /// Number of most recent unpruned rounds inspected.
    pub window: usize,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            repeat_threshold: 3,
            error_threshold: 3,
            stagnation_threshold: 2,
            max_recovery_attempts: 3,
            window: 8,
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum RecoveryFailure {
    #[error("recovery backend failure ({detail}); attempt {attempts_used} counted")]
    Backend { attempts_used: u32, detail: String },
    #[error("{kind:?} recurred after {attempts} recovery attempts")]
    AttemptsExhausted { kind: AnomalyKind, attempts: u32 },
}

/// Whitespace-collapsed, case-folded rendering of an invocation.
pub fn normalized_action(round: &Round) -> Option<String> {
    let inv = round.response.invocation()?;
    let args = serde_json::to_string(&inv.arguments).unwrap_or_default();
    let raw = format!("{}({})", inv.capability_name, args);
    Some(raw.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
}

/// Length of the longest suffix of `window` whose elements all satisfy
/// `same` relative to the last element.
fn trailing_run<T>(window: &[T], same: impl Fn(&T, &T) -> bool) -> usize {
    let Some(last) = window.last() else { return 0 };
    window.iter().rev().take_while(|r| same(r, last)).count()
}

fn evidence(window: &[Round], run: usize) -> Vec<RoundIndex> {
    window[window.len() - run..].iter().map(|r| r.index).collect()
}

/// Returns the highest-priority anomaly whose evidence ends at the latest
/// round of `window`, if any. Pure.
pub fn inspect(window: &[Round], cfg: &SupervisorConfig) -> Option<AnomalySignal> {
    let latest = window.last()?;
    let signal = |kind, evidence_rounds| AnomalySignal { kind, evidence_rounds, first_detected_round: latest.index };

    if latest.response.is_malformed() {
        return Some(signal(AnomalyKind::MalformedCall, vec![latest.index]));
    }
    if latest.observation.as_ref().is_some_and(|o| {
        !o.is_ok() && o.error_detail.as_deref().is_some_and(|d| d.starts_with(UNKNOWN_CAPABILITY))
    }) {
        return Some(signal(AnomalyKind::UnknownCapability, vec![latest.index]));
    }

    let failing = |r: &Round| r.observation.as_ref().is_some_and(|o| !o.is_ok());
    if failing(latest) {
        let run = trailing_run(window, |r, _| failing(r));
        if run >= cfg.error_threshold {
            return Some(signal(AnomalyKind::RepeatedError, evidence(window, run)));
        }
    }

    if let Some(key) = normalized_action(latest) {
        let run = trailing_run(window, |r, _| normalized_action(r).as_deref() == Some(key.as_str()));
        if run >= cfg.repeat_threshold {
            return Some(signal(AnomalyKind::RepeatedAction, evidence(window, run)));
        }
    }

    if !latest.response.reasoning.trim().is_empty() {
        let run = trailing_run(window, |r, last| r.response.reasoning == last.response.reasoning);
        if run >= cfg.stagnation_threshold {
            return Some(signal(AnomalyKind::StagnantOutput, evidence(window, run)));
        }
    }
    None
}

/// The most recent `cfg.window` rounds that have not been pruned, with an
/// optional pending round (parsed but not yet executed) appended.
pub fn inspection_window(state: &RunState, pending: Option<&Round>, size: usize) -> Vec<Round> {
    let mut out: Vec<Round> = state
        .rounds
        .iter()
        .filter(|r| !state.pruned.contains(&r.index))
        .cloned()
        .collect();
    out.extend(pending.cloned());
    let skip = out.len().saturating_sub(size.max(1));
    out.split_off(skip)
}

const DIAGNOSIS_INSTRUCTIONS: &str = "You supervise a research agent whose execution has been interrupted. \
Analyze the listed rounds and state the root cause of the failure in a few sentences.";

const REGENERATION_INSTRUCTIONS: &str = "You supervise a research agent. Its failed rounds have been removed \
from its context. Using the diagnosis, write a revised plan and the concrete next action the agent should \
take instead. Do not repeat the failed approach.";

fn render_evidence(rounds: &[&Round]) -> String {
    let mut out = String::new();
    for r in rounds {
        out.push_str(&format!("Round {}:\n{}\n", r.index, r.response.render()));
        if let Some(o) = &r.observation {
            out.push_str(&render_observation(r.index, o));
            out.push('\n');
        }
    }
    out
}

/// Runs diagnosis, pruning and regeneration for `signal`.
///
/// `pending` is the round being inspected before execution, if the signal
/// was raised at the post-parse checkpoint. Pruning only touches the
/// context and the latest memory unit; completed units are never edited.
/// On a backend failure nothing is pruned, but the attempt still counts.
pub fn interrupt_and_recover(
    mut state: RunState,
    signal: &AnomalySignal,
    pending: Option<&Round>,
    backend: &dyn ChatBackend,
    cfg: &SupervisorConfig,
    sampling: Sampling,
) -> (RunState, Result<RecoveryOutcome, RecoveryFailure>) {
    let used = state.recovery_attempts.get(&signal.kind).copied().unwrap_or(0);
    if used >= cfg.max_recovery_attempts {
        state.status = RunStatus::Aborted;
        return (state, Err(RecoveryFailure::AttemptsExhausted { kind: signal.kind, attempts: used }));
    }
    let attempts_used = used + 1;
    state.recovery_attempts.insert(signal.kind, attempts_used);

    let evidence_rounds: Vec<&Round> = state
        .rounds
        .iter()
        .chain(pending)
        .filter(|r| signal.evidence_rounds.contains(&r.index))
        .collect();
    let query = render_query(&state.query);

    let diag_req = ChatRequest::new(
        Purpose::SupervisorDiagnosis,
        vec![
            ChatMessage::system(DIAGNOSIS_INSTRUCTIONS),
            ChatMessage::user(format!(
                "{query}\n\nDetected anomaly: {}.\n\nEvidence:\n{}",
                signal.kind.describe(),
                render_evidence(&evidence_rounds)
            )),
        ],
        sampling,
    );
    let diagnosis = match backend.complete(&diag_req) {
        Ok(r) => r.text.trim().to_string(),
        Err(e) => return (state, Err(RecoveryFailure::Backend { attempts_used, detail: e.to_string() })),
    };

    let current_goal = state.memory.last().map(|u| u.sub_goal.clone()).unwrap_or_default();
    let regen_req = ChatRequest::new(
        Purpose::SupervisorRegen,
        vec![
            ChatMessage::system(REGENERATION_INSTRUCTIONS),
            ChatMessage::user(format!(
                "{query}\n\nCompleted sub-goals:\n{}\nCurrent sub-goal: {current_goal}\n\nDiagnosis: {diagnosis}",
                render_units(state.memory.completed())
            )),
        ],
        sampling,
    );
    let guidance = match backend.complete(&regen_req) {
        Ok(r) => r.text.trim().to_string(),
        Err(e) => return (state, Err(RecoveryFailure::Backend { attempts_used, detail: e.to_string() })),
    };

    let frozen: BTreeSet<RoundIndex> =
        state.memory.completed().iter().flat_map(|u| u.round_indices.iter().copied()).collect();
    let pruned: BTreeSet<RoundIndex> =
        signal.evidence_rounds.iter().copied().filter(|r| !frozen.contains(r)).collect();
    state.context.prune(&pruned);
    if let Some(unit) = state.memory.units.last_mut() {
        unit.tool_log.retain(|e| !pruned.contains(&e.round_index));
    }
    state.pruned.extend(pruned.iter().copied());
    state.guidance = Some(guidance.clone());

    let outcome = RecoveryOutcome {
        diagnosis,
        pruned_rounds: pruned.into_iter().collect(),
        regenerated: true,
        attempts_used,
        guidance,
    };
    (state, Ok(outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendError, ChatReply, FixtureEntry, ScriptedBackend};
    use crate::memory::{ContextMessage, ContextMode, ContextState};
    use crate::trajectory::{
        AgentResponse, MemoryList, MemoryUnit, Observation, ObservationStatus, ResponseAction, ToolInvocation,
        ToolLogEntry, UserQuery,
    };
    use serde_json::json;

    fn invoke(index: RoundIndex, name: &str, q: &str, reasoning: &str, obs: Observation) -> Round {
        Round {
            index,
            response: AgentResponse {
                reasoning: reasoning.into(),
                action: ResponseAction::Invoke {
                    invocation: ToolInvocation::new(name, [("query".to_string(), json!(q))].into()),
                },
                note: None,
            },
            observation: Some(obs),
        }
    }

    fn malformed(index: RoundIndex) -> Round {
        Round {
            index,
            response: AgentResponse {
                reasoning: "hmm".into(),
                action: ResponseAction::Malformed { reason: "no call".into() },
                note: None,
            },
            observation: None,
        }
    }

    #[test]
    fn malformed_is_detected_directly() {
        let s = inspect(&[malformed(4)], &SupervisorConfig::default()).unwrap();
        assert_eq!(s.kind, AnomalyKind::MalformedCall);
        assert_eq!(s.evidence_rounds, vec![4]);
        assert_eq!(s.first_detected_round, 4);
    }

    #[test]
    fn three_identical_actions_repeat() {
        let w: Vec<_> = (1..=3).map(|i| invoke(i, "search", "x", &format!("r{i}"), Observation::ok("same"))).collect();
        let s = inspect(&w, &SupervisorConfig::default()).unwrap();
        assert_eq!(s.kind, AnomalyKind::RepeatedAction);
        assert_eq!(s.evidence_rounds, vec![1, 2, 3]);
    }

    #[test]
    fn normalization_defeats_reformatting() {
        let w = vec![
            invoke(1, "search", "Alpha  Beta", "a", Observation::ok("o")),
            invoke(2, "SEARCH", "alpha beta", "b", Observation::ok("o")),
            invoke(3, "search", "ALPHA beta", "c", Observation::ok("o")),
        ];
        assert_eq!(inspect(&w, &SupervisorConfig::default()).unwrap().kind, AnomalyKind::RepeatedAction);
    }

    #[test]
    fn below_threshold_is_silent() {
        let w = vec![
            invoke(1, "search", "x", "a", Observation::ok("o")),
            invoke(2, "search", "x", "b", Observation::ok("o")),
            invoke(3, "search", "y", "c", Observation::ok("o")),
        ];
        assert_eq!(inspect(&w, &SupervisorConfig::default()), None);
    }

    #[test]
    fn priority_order() {
        let err = || Observation::failure(ObservationStatus::ToolError, "boom");
        let unknown = || Observation::failure(ObservationStatus::ToolError, format!("{UNKNOWN_CAPABILITY} 'zzz'"));
        // Repeated failing identical calls: repeated_error outranks repeated_action.
        let w: Vec<_> = (1..=3).map(|i| invoke(i, "search", "x", "same", err())).collect();
        assert_eq!(inspect(&w, &SupervisorConfig::default()).unwrap().kind, AnomalyKind::RepeatedError);
        // Unknown capability outranks both.
        let mut w2 = w.clone();
        w2.push(invoke(4, "zzz", "x", "same", unknown()));
        assert_eq!(inspect(&w2, &SupervisorConfig::default()).unwrap().kind, AnomalyKind::UnknownCapability);
        // Stagnant reasoning alone.
        let w3 = vec![
            invoke(1, "search", "a", "same text", Observation::ok("o")),
            invoke(2, "search", "b", "same text", Observation::ok("o")),
        ];
        let s = inspect(&w3, &SupervisorConfig::default()).unwrap();
        assert_eq!((s.kind, s.evidence_rounds), (AnomalyKind::StagnantOutput, vec![1, 2]));
    }

    #[test]
    fn old_evidence_does_not_refire() {
        let w = vec![malformed(1), invoke(2, "search", "x", "a", Observation::ok("o"))];
        assert_eq!(inspect(&w, &SupervisorConfig::default()), None);
    }

    #[test]
    fn detection_is_pure() {
        let w: Vec<_> = (1..=3).map(|i| invoke(i, "search", "x", &format!("r{i}"), Observation::ok("o"))).collect();
        assert_eq!(inspect(&w, &SupervisorConfig::default()), inspect(&w, &SupervisorConfig::default()));
    }

    fn state_with_repeats() -> RunState {
        let query = UserQuery::new("find the thing", vec![]).unwrap();
        let mut rounds: Vec<Round> =
            (1..=6).map(|i| invoke(i, "search", &format!("q{i}"), &format!("step {i}"), Observation::ok(format!("obs {i}")))).collect();
        rounds.extend((7..=9).map(|i| invoke(i, "search", "stuck", &format!("again {i}"), Observation::ok(format!("same result {i}")))));
        let log = |r: &Round| ToolLogEntry::from_round(r.response.invocation().unwrap(), r.observation.as_ref().unwrap(), r.index, 500);
        let memory = MemoryList::new(vec![
            MemoryUnit { round_indices: (1..=5).collect(), sub_goal: "first".into(), tool_log: rounds[..5].iter().map(log).collect(), summary: "s1".into() },
            MemoryUnit { round_indices: (6..=9).collect(), sub_goal: "second".into(), tool_log: rounds[5..].iter().map(log).collect(), summary: "s2".into() },
        ]);
        let mut context = ContextState::initial("pre", &query);
        for r in &rounds[5..] {
            context.messages.push(ContextMessage { role: crate::backend::Role::Assistant, text: r.response.render(), round: Some(r.index) });
            context.messages.push(ContextMessage { role: crate::backend::Role::User, text: render_observation(r.index, r.observation.as_ref().unwrap()), round: Some(r.index) });
        }
        context.mode = ContextMode::Incremental;
        let mut state = RunState::new(query, context);
        state.rounds = rounds;
        state.memory = memory;
        state
    }

    fn recovery_backend() -> ScriptedBackend {
        ScriptedBackend::new(vec![
            FixtureEntry::fallback(Purpose::SupervisorDiagnosis, "looping on one query"),
            FixtureEntry::fallback(Purpose::SupervisorRegen, "search a different phrasing").in_phase(0),
            FixtureEntry::fallback(Purpose::SupervisorDiagnosis, "looping on one query").in_phase(1),
            FixtureEntry::fallback(Purpose::SupervisorRegen, "search a different phrasing").in_phase(1),
        ])
        .unwrap()
    }

    #[test]
    fn repeated_action_recovery_prunes_context_and_log() {
        let state = state_with_repeats();
        let before = state.context.messages.len();
        let signal = inspect(&inspection_window(&state, None, 8), &SupervisorConfig::default()).unwrap();
        assert_eq!(signal.evidence_rounds, vec![7, 8, 9]);
        let (state, out) = interrupt_and_recover(state, &signal, None, &recovery_backend(), &SupervisorConfig::default(), Sampling::default());
        let out = out.unwrap();
        assert_eq!(out.pruned_rounds, vec![7, 8, 9]);
        assert!(out.regenerated);
        assert_eq!(out.diagnosis, "looping on one query");
        assert_eq!(state.context.messages.len(), before - 6);
        assert!(!state.context.text().contains("again 8"));
        assert_eq!(state.memory.units[1].tool_log.len(), 1);
        assert_eq!(state.memory.units[0].tool_log.len(), 5);
        assert_eq!(state.memory.len(), 2);
        assert_eq!(state.guidance.as_deref(), Some("search a different phrasing"));
        // Pruned rounds drop out of the window, so the signal does not refire.
        assert_eq!(inspect(&inspection_window(&state, None, 8), &SupervisorConfig::default()), None);
    }

    #[test]
    fn completed_units_are_never_pruned() {
        let state = state_with_repeats();
        let signal = AnomalySignal { kind: AnomalyKind::RepeatedError, evidence_rounds: vec![5, 6], first_detected_round: 6 };
        let (state, out) = interrupt_and_recover(state, &signal, None, &recovery_backend(), &SupervisorConfig::default(), Sampling::default());
        assert_eq!(out.unwrap().pruned_rounds, vec![6]);
        assert_eq!(state.memory.units[0].tool_log.len(), 5);
    }

    #[test]
    fn pending_malformed_round_is_pruned() {
        let query = UserQuery::new("q", vec![]).unwrap();
        let mut state = RunState::new(query.clone(), ContextState::initial("pre", &query));
        state.rounds.push(invoke(1, "search", "x", "a", Observation::ok("o")));
        state.memory = MemoryList::new(vec![MemoryUnit { round_indices: vec![1], sub_goal: "g".into(), tool_log: vec![], summary: String::new() }]);
        let pending = malformed(2);
        let signal = inspect(&inspection_window(&state, Some(&pending), 8), &SupervisorConfig::default()).unwrap();
        let (state, out) = interrupt_and_recover(state, &signal, Some(&pending), &recovery_backend(), &SupervisorConfig::default(), Sampling::default());
        assert_eq!(out.unwrap().pruned_rounds, vec![2]);
        assert!(state.pruned.contains(&2));
    }

    struct Down;
    impl ChatBackend for Down {
        fn complete(&self, _: &ChatRequest) -> Result<ChatReply, BackendError> {
            Err(BackendError::Unreachable { attempts: 1, detail: "down".into() })
        }
    }

    #[test]
    fn backend_failure_leaves_state_unpruned() {
        let state = state_with_repeats();
        let before = state.context.clone();
        let signal = inspect(&inspection_window(&state, None, 8), &SupervisorConfig::default()).unwrap();
        let (state, out) = interrupt_and_recover(state, &signal, None, &Down, &SupervisorConfig::default(), Sampling::default());
        assert!(matches!(out, Err(RecoveryFailure::Backend { attempts_used: 1, .. })));
        assert_eq!(state.context, before);
        assert!(state.pruned.is_empty());
        assert_eq!(state.recovery_attempts[&AnomalyKind::RepeatedAction], 1);
    }

    #[test]
    fn attempts_are_capped() {
        let mut state = state_with_repeats();
        state.recovery_attempts.insert(AnomalyKind::RepeatedAction, 3);
        let signal = inspect(&inspection_window(&state, None, 8), &SupervisorConfig::default()).unwrap();
        let (state, out) = interrupt_and_recover(state, &signal, None, &recovery_backend(), &SupervisorConfig::default(), Sampling::default());
        assert!(matches!(out, Err(RecoveryFailure::AttemptsExhausted { attempts: 3, .. })));
        assert_eq!(state.status, RunStatus::Aborted);
    }
}
