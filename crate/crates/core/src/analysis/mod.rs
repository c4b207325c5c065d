//! Data-analysis sub-agent: profile the inputs, then generate, execute and
//! refine scripts in a sandbox until the goal is answered.

mod profile;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use profile::{
    profile, profile_bytes, ColumnSummary, DataProfile, FileKind, FileProfile, Schema, PREVIEW_CHARS, PREVIEW_ROWS,
};

use crate::backend::{ChatBackend, ChatMessage, ChatRequest, Purpose, Sampling};
use crate::config::ExecLimits;
use crate::memory::extract_json_object;
use crate::pool::{
    CapabilityDescriptor, CapabilityHandler, CapabilityKind, CostHint, InvocationContext, ParamType, ParameterSpec,
    ToolFailure,
};
use crate::sandbox::{ExecFeedback, ExecRequest, ManifestFile, Sandbox};
use crate::trace::{SubagentRecord, TraceRecord, TraceSink};
use crate::trajectory::{clip_chars, Arguments};

pub const CAPABILITY_NAME: &str = "data_analysis";
const FEEDBACK_EXCERPT: usize = 3000;

const INSTRUCTIONS: &str = "You are a data analyst. You receive a goal, a profile of the input files, and the \
results of your earlier scripts. Input files are available in the working directory under their base names. \
Reply with one JSON object: {\"action\": \"execute\", \"code\": \"<python script>\"} to run a script, or \
{\"action\": \"finish\", \"summary\": \"<final answer with supporting evidence>\"} when the goal is answered. \
If a script fails, revise it using the error message; never resubmit a failed script unchanged.";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Decision {
    Execute(String),
    Finish(String),
}

fn parse_decision(text: &str) -> Result<Decision, String> {
    let obj = extract_json_object(text).ok_or("reply contains no JSON object")?;
    let field = |k: &str| obj.get(k).and_then(Value::as_str).map(str::to_string);
    match field("action").as_deref() {
        Some("execute") => match field("code") {
            Some(code) if !code.trim().is_empty() => Ok(Decision::Execute(code)),
            _ => Err("execute action without code".into()),
        },
        Some("finish") => Ok(Decision::Finish(field("summary").unwrap_or_default())),
        Some(other) => Err(format!("unknown action '{other}'")),
        None => Err("reply has no action field".into()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisStep {
    pub step: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<ExecFeedback>,
    /// Why the step produced no execution, if it did not.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AnalysisStatus {
    Finished,
    /// Step budget spent without a finish decision; the report is best-effort.
    BudgetExhausted,
    SandboxUnreachable { detail: String },
    BackendFailure { detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub goal: String,
    pub status: AnalysisStatus,
    pub steps: Vec<AnalysisStep>,
    pub summary: String,
}

impl AnalysisReport {
    pub fn executions(&self) -> usize {
        self.steps.iter().filter(|s| s.feedback.is_some()).count()
    }

    pub fn best_effort(&self) -> bool {
        self.status != AnalysisStatus::Finished
    }

    /// The last successful execution, if any.
    pub fn evidence(&self) -> Option<&AnalysisStep> {
        self.steps.iter().rev().find(|s| s.feedback.as_ref().is_some_and(ExecFeedback::is_ok))
    }

    pub fn render(&self) -> String {
        let status = match &self.status {
            AnalysisStatus::Finished => "finished".to_string(),
            AnalysisStatus::BudgetExhausted => "step budget exhausted (best-effort report)".to_string(),
            AnalysisStatus::SandboxUnreachable { detail } => format!("failed: sandbox unreachable ({detail})"),
            AnalysisStatus::BackendFailure { detail } => format!("failed: backend error ({detail})"),
        };
        let mut out = format!(
            "Data analysis report\nGoal: {}\nStatus: {status}\nSteps: {}\nExecutions: {}\n",
            self.goal,
            self.steps.len(),
            self.executions()
        );
        if !self.summary.is_empty() {
            let _ = writeln!(out, "Summary: {}", self.summary);
        }
        if let Some(e) = self.evidence() {
            let fb = e.feedback.as_ref().expect("evidence has feedback");
            let _ = write!(
                out,
                "Evidence (step {}):\n```python\n{}\n```\nOutput:\n{}\n",
                e.step,
                e.script.as_deref().unwrap_or_default().trim_end(),
                clip_chars(fb.stdout.trim_end(), FEEDBACK_EXCERPT)
            );
        }
        out
    }
}

fn render_history(steps: &[AnalysisStep]) -> String {
    let mut out = String::new();
    for s in steps {
        let _ = writeln!(out, "\n--- Step {} ---", s.step);
        if let Some(script) = &s.script {
            let _ = writeln!(out, "Script:\n{}", script.trim_end());
        }
        if let Some(fb) = &s.feedback {
            let _ = write!(out, "Result:\n{}", clip_chars(&fb.render(), FEEDBACK_EXCERPT));
        }
        if let Some(n) = &s.note {
            let _ = writeln!(out, "Note: {n}");
        }
    }
    out
}

pub struct AnalysisInputs<'a> {
    pub goal: &'a str,
    pub profile: &'a DataProfile,
    pub manifest: Vec<ManifestFile>,
    pub limits: ExecLimits,
    pub max_steps: u32,
}

/// Reason, execute, observe, refine; at most `max_steps` generation calls.
pub fn analysis_loop(
    inputs: AnalysisInputs<'_>,
    backend: &dyn ChatBackend,
    sandbox: &dyn Sandbox,
    sampling: Sampling,
    trace: &TraceSink,
) -> AnalysisReport {
    let mut steps: Vec<AnalysisStep> = Vec::new();
    let mut status = AnalysisStatus::BudgetExhausted;
    let mut summary = String::new();
    let header = format!("Goal: {}\n\nInput files:\n{}", inputs.goal, inputs.profile.render());

    for n in 1..=inputs.max_steps {
        let user = if steps.is_empty() {
            header.clone()
        } else {
            format!("{header}\nPrevious steps:{}", render_history(&steps))
        };
        let request =
            ChatRequest::new(Purpose::SubagentData, vec![ChatMessage::system(INSTRUCTIONS), ChatMessage::user(user)], sampling);
        let reply = match backend.complete(&request) {
            Ok(r) => r,
            Err(e) => {
                status = AnalysisStatus::BackendFailure { detail: e.to_string() };
                break;
            }
        };
        let mut step = AnalysisStep { step: n, script: None, feedback: None, note: None };
        match parse_decision(&reply.text) {
            Err(reason) => step.note = Some(format!("unusable reply: {reason}")),
            Ok(Decision::Finish(s)) => {
                summary = s;
                status = AnalysisStatus::Finished;
                step.note = Some("finish".into());
            }
            Ok(Decision::Execute(code)) => {
                let last = steps.iter().rev().find(|s| s.feedback.is_some());
                let resubmitted = last.is_some_and(|s| {
                    s.feedback.as_ref().is_some_and(|f| !f.is_ok()) && s.script.as_deref() == Some(code.as_str())
                });
                if resubmitted {
                    step.note = Some("identical script resubmitted after an error; not executed".into());
                } else {
                    let req = ExecRequest { script: code.clone(), manifest: inputs.manifest.clone(), limits: inputs.limits };
                    match sandbox.execute(&req) {
                        Ok(fb) => step.feedback = Some(fb),
                        Err(e) => {
                            step.note = Some(e.to_string());
                            status = AnalysisStatus::SandboxUnreachable { detail: e.to_string() };
                        }
                    }
                }
                step.script = Some(code);
            }
        }
        let _ = trace.write(&TraceRecord::Subagent(SubagentRecord {
            agent: CAPABILITY_NAME.into(),
            step: n,
            detail: json!(step),
        }));
        steps.push(step);
        if status != AnalysisStatus::BudgetExhausted {
            break;
        }
    }
    if status == AnalysisStatus::BudgetExhausted && summary.is_empty() {
        summary = "no finish decision within the step budget; see the latest evidence".into();
    }
    AnalysisReport { goal: inputs.goal.to_string(), status, steps, summary }
}

pub fn descriptor() -> CapabilityDescriptor {
    CapabilityDescriptor {
        name: CAPABILITY_NAME.into(),
        kind: CapabilityKind::SubAgent,
        description: "Delegate a data task over local files (csv, tsv, text, zip) to an analyst that profiles the \
                      files and writes and runs Python scripts. Defaults to the files attached to the task."
            .into(),
        parameters: vec![
            ParameterSpec::required("goal", ParamType::String, "The question to answer from the data"),
            ParameterSpec::optional("files", ParamType::StringList, "Paths of the input files"),
        ],
        cost_hint: CostHint::LongHorizon,
    }
}

pub struct DataAnalysisCapability {
    sandbox: Arc<dyn Sandbox>,
    limits: ExecLimits,
}

impl DataAnalysisCapability {
    pub fn new(sandbox: Arc<dyn Sandbox>, limits: ExecLimits) -> Self {
        Self { sandbox, limits }
    }
}

impl CapabilityHandler for DataAnalysisCapability {
    fn invoke(&self, args: &Arguments, ctx: &InvocationContext) -> Result<String, ToolFailure> {
        let goal = args.get("goal").and_then(Value::as_str).unwrap_or_default();
        let files: Vec<PathBuf> = match args.get("files").and_then(Value::as_array) {
            Some(list) => list.iter().filter_map(Value::as_str).map(PathBuf::from).collect(),
            None => ctx.query.attachments.iter().map(|a| a.path.clone()).collect(),
        };
        let data_profile = profile(&files);
        let manifest = files.iter().filter_map(|p| ManifestFile::from_path(p).ok()).collect();
        let inputs = AnalysisInputs {
            goal,
            profile: &data_profile,
            manifest,
            limits: self.limits,
            max_steps: ctx.max_subagent_steps,
        };
        let report = analysis_loop(inputs, &*ctx.backend, &*self.sandbox, ctx.sampling, &ctx.trace);
        match &report.status {
            AnalysisStatus::SandboxUnreachable { detail } | AnalysisStatus::BackendFailure { detail } => {
                Err(ToolFailure::tool_error(detail.clone()).with_payload(report.render()))
            }
            _ => Ok(report.render()),
        }
    }
}
