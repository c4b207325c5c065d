//! Browser sub-agent: a policy over a partially observed browser, run
//! against a deterministic simulated site graph.

mod env;
mod policy;
mod site;

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use env::{
    action_from_parts, pdf_to_markdown, ActOutcome, BrowserAction, BrowserEnvironment, BrowserState, Finding,
    PageSnapshot, PdfPage, SimBrowser, TabState, BLANK_URL,
};
pub use policy::{observe, policy_step, BrowserHistory, BrowserObservation, HistoryStep, PolicyDecision};
pub use site::{Block, PageFlags, SimPage, SimSiteGraph, SiteError, VIEWPORT_HEIGHT};

use crate::backend::{ChatBackend, Sampling};
use crate::pool::{
    CapabilityDescriptor, CapabilityHandler, CapabilityKind, CostHint, InvocationContext, ParamType, ParameterSpec,
    ToolFailure,
};
use crate::trace::{SubagentRecord, TraceRecord, TraceSink};
use crate::trajectory::{clip_chars, Arguments};

pub const CAPABILITY_NAME: &str = "browser";
const FINDING_EXCERPT: usize = 4000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrowserTask {
    pub instruction: String,
    pub max_steps: u32,
}

impl BrowserTask {
    pub fn new(instruction: impl Into<String>, max_steps: u32) -> Result<Self, String> {
        let instruction = instruction.into();
        if instruction.trim().is_empty() {
            return Err("browser task instruction is empty".into());
        }
        Ok(Self { instruction, max_steps: max_steps.max(1) })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EpisodeStatus {
    Terminated,
    StepBudgetReached,
    ForcedTerminate,
    BackendFailure { detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrowserReport {
    pub task: String,
    pub steps: u32,
    pub status: EpisodeStatus,
    pub summary: Option<String>,
    pub findings: Vec<Finding>,
}

impl BrowserReport {
    pub fn render(&self) -> String {
        let status = match &self.status {
            EpisodeStatus::Terminated => "terminated by the policy".to_string(),
            EpisodeStatus::StepBudgetReached => "step budget reached before termination".to_string(),
            EpisodeStatus::ForcedTerminate => "terminated after unusable policy replies".to_string(),
            EpisodeStatus::BackendFailure { detail } => format!("failed: {detail}"),
        };
        let mut out = format!("Browser report\nTask: {}\nSteps: {}\nStatus: {status}\n", self.task, self.steps);
        if let Some(s) = &self.summary {
            let _ = writeln!(out, "Summary: {s}");
        }
        if self.findings.is_empty() {
            out.push_str("Findings: none\n");
        } else {
            let _ = writeln!(out, "Findings: {}", self.findings.len());
            for (i, f) in self.findings.iter().enumerate() {
                let _ = write!(out, "\n[{}] {}\n{}\n", i + 1, f.url, clip_chars(&f.content, FINDING_EXCERPT));
            }
        }
        out
    }
}

/// Runs one episode: observe, choose an action, act, until the policy
/// terminates or `max_steps` actions have been taken.
pub fn run_subtask(
    task: &BrowserTask,
    env: &mut dyn BrowserEnvironment,
    backend: &dyn ChatBackend,
    sampling: Sampling,
    trace: &TraceSink,
) -> BrowserReport {
    let mut history = BrowserHistory::new(task.instruction.clone());
    let mut findings: Vec<Finding> = Vec::new();
    let mut summary = None;
    let mut status = EpisodeStatus::StepBudgetReached;

    for step in 1..=task.max_steps {
        let obs = observe(env, &history, task.max_steps, &findings);
        let decision = match policy_step(&history, &obs, backend, sampling) {
            Ok(d) => d,
            Err(e) => {
                status = EpisodeStatus::BackendFailure { detail: e.to_string() };
                break;
            }
        };
        let outcome = env.act(&decision.action);
        let _ = trace.write(&TraceRecord::Subagent(SubagentRecord {
            agent: CAPABILITY_NAME.into(),
            step,
            detail: json!({
                "context": obs.context,
                "snapshot": obs.snapshot,
                "action": decision.action,
                "result": outcome.result,
                "note": decision.note,
            }),
        }));
        findings.extend(outcome.finding);
        history.steps.push(HistoryStep {
            context: obs.context,
            snapshot: obs.snapshot,
            action: decision.action.clone(),
            result: outcome.result,
        });
        if outcome.terminated {
            if let BrowserAction::Terminate { summary: s } = decision.action {
                summary = s;
            }
            status = if decision.forced { EpisodeStatus::ForcedTerminate } else { EpisodeStatus::Terminated };
            break;
        }
    }
    BrowserReport {
        task: task.instruction.clone(),
        steps: history.steps.len() as u32,
        status,
        summary,
        findings,
    }
}

pub fn descriptor() -> CapabilityDescriptor {
    CapabilityDescriptor {
        name: CAPABILITY_NAME.into(),
        kind: CapabilityKind::SubAgent,
        description: "Delegate a web task to a browser agent that can search, navigate, click, scroll, fill \
                      forms and read PDFs. Returns its findings."
            .into(),
        parameters: vec![ParameterSpec::required("task", ParamType::String, "What to find or do on the web")],
        cost_hint: CostHint::LongHorizon,
    }
}

/// Capability handler running each invocation in a fresh simulated browser.
pub struct BrowserCapability {
    site: Arc<SimSiteGraph>,
    pdf_page_chars: usize,
}

impl BrowserCapability {
    pub fn new(site: Arc<SimSiteGraph>, pdf_page_chars: usize) -> Self {
        Self { site, pdf_page_chars }
    }
}

impl CapabilityHandler for BrowserCapability {
    fn invoke(&self, args: &Arguments, ctx: &InvocationContext) -> Result<String, ToolFailure> {
        let instruction = args.get("task").and_then(|v| v.as_str()).unwrap_or_default();
        let task = BrowserTask::new(instruction, ctx.max_subagent_steps).map_err(ToolFailure::parse_error)?;
        let mut env = SimBrowser::new(Arc::clone(&self.site), self.pdf_page_chars);
        let report = run_subtask(&task, &mut env, &*ctx.backend, ctx.sampling, &ctx.trace);
        match &report.status {
            EpisodeStatus::BackendFailure { detail } => {
                Err(ToolFailure::tool_error(format!("browser backend failure: {detail}")).with_payload(report.render()))
            }
            _ => Ok(report.render()),
        }
    }
}
