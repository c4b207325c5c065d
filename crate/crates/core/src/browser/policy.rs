use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::env::{action_from_parts, BrowserAction, BrowserEnvironment, Finding};
use crate::agent::parse_agent_response;
use crate::backend::{BackendError, ChatBackend, ChatMessage, ChatRequest, Purpose, Sampling};
use crate::trajectory::{clip_chars, ResponseAction};

const RESULT_EXCERPT: usize = 2000;

const INSTRUCTIONS: &str = "You operate a web browser to complete a task. Each turn you receive the task, \
the history of earlier steps, and the current page: its url, tabs, scroll position and the interactive \
elements in the viewport, numbered [1], [2], ... A screenshot of the viewport is attached.\n\
Reply with exactly one action as <tool_call>{\"name\": \"<action>\", \"arguments\": {...}}</tool_call>. \
Only the first action in a reply is executed. Actions:\n\
- web_search {query}\n\
- pdf_to_markdown {url, offset?, budget?}: read a PDF page by page\n\
- go_to_url {url}\n\
- click_element {index}\n\
- input_text {index, text}\n\
- scroll_down {amount?} / scroll_up {amount?}\n\
- extract_content {}: return the text of the current page\n\
- open_tab {url?} / switch_tab {tab} / close_tab {tab?}\n\
- terminate {summary}: finish and report what you found";

/// o_t without the screenshot payload beyond its reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrowserObservation {
    pub context: String,
    pub snapshot: String,
    pub screenshot_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryStep {
    pub context: String,
    pub snapshot: String,
    pub action: BrowserAction,
    pub result: String,
}

/// Text-only interaction history. Screenshots are never stored here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrowserHistory {
    pub task: String,
    pub steps: Vec<HistoryStep>,
}

impl BrowserHistory {
    pub fn new(task: impl Into<String>) -> Self {
        Self { task: task.into(), steps: Vec::new() }
    }

    pub fn serialize(&self) -> String {
        let mut out = format!("Task: {}\n", self.task);
        for (i, s) in self.steps.iter().enumerate() {
            let _ = write!(
                out,
                "\n--- Step {} observation ---\n{}\n{}--- Step {} action ---\n{}\n",
                i + 1,
                s.context,
                s.snapshot,
                i + 1,
                s.action.render()
            );
        }
        out
    }
}

pub fn observe(
    env: &dyn BrowserEnvironment,
    history: &BrowserHistory,
    max_steps: u32,
    findings: &[Finding],
) -> BrowserObservation {
    let step = history.steps.len() + 1;
    let mut context = format!("Task: {}\nStep {step} of {max_steps}\nKey findings:", history.task);
    if findings.is_empty() {
        context.push_str(" (none yet)");
    }
    for f in findings {
        let _ = write!(context, "\n- {} chars from {}", f.content.chars().count(), f.url);
    }
    if let Some(prev) = history.steps.last() {
        let _ = write!(context, "\nPrevious action: {}\nResult: {}", prev.action.render(), clip_chars(&prev.result, RESULT_EXCERPT));
    }
    let snap = env.snapshot();
    BrowserObservation { context, snapshot: snap.text, screenshot_ref: snap.screenshot_ref }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyDecision {
    pub action: BrowserAction,
    pub note: Option<String>,
    /// Both attempts were unusable and the episode is being ended.
    pub forced: bool,
}

fn interpret(reply: &crate::backend::ChatReply) -> Result<(BrowserAction, Option<String>), String> {
    let parsed = parse_agent_response(reply);
    match parsed.action {
        ResponseAction::Invoke { invocation } => {
            action_from_parts(&invocation.capability_name, &invocation.arguments).map(|a| (a, parsed.note))
        }
        ResponseAction::Answer { text } => Ok((BrowserAction::Terminate { summary: Some(text) }, parsed.note)),
        ResponseAction::Malformed { reason } => Err(reason),
    }
}

/// One draw from the policy: a single backend call (plus one corrective
/// retry) yielding exactly one action.
pub fn policy_step(
    history: &BrowserHistory,
    observation: &BrowserObservation,
    backend: &dyn ChatBackend,
    sampling: Sampling,
) -> Result<PolicyDecision, BackendError> {
    let mut current = ChatMessage::user(format!(
        "{}\n--- Current observation (step {}) ---\n{}\n{}",
        history.serialize(),
        history.steps.len() + 1,
        observation.context,
        observation.snapshot
    ));
    current.attachments.push(observation.screenshot_ref.clone());
    let mut messages = vec![ChatMessage::system(INSTRUCTIONS), current];

    let mut last_error = String::new();
    for attempt in 0..2 {
        let reply = backend.complete(&ChatRequest::new(Purpose::SubagentBrowser, messages.clone(), sampling))?;
        match interpret(&reply) {
            Ok((action, note)) => return Ok(PolicyDecision { action, note, forced: false }),
            Err(reason) => {
                last_error = reason;
                if attempt == 0 {
                    messages.push(ChatMessage::new(crate::backend::Role::Assistant, reply.text));
                    messages.push(ChatMessage::user(format!(
                        "That reply could not be executed: {last_error}. Reply with exactly one valid action."
                    )));
                }
            }
        }
    }
    Ok(PolicyDecision {
        action: BrowserAction::Terminate { summary: None },
        note: Some(format!("no valid action after a retry ({last_error}); terminating")),
        forced: true,
    })
}
