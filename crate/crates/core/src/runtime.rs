//! Wiring from a [`Config`] to a runnable agent, plus trace replay.

use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::agent::{Agent, RunOutcome};
use crate::analysis::{self, DataAnalysisCapability};
use crate::backend::{ChatBackend, HttpBackend, ReplayBackend, ScriptedBackend};
use crate::browser::{self, BrowserCapability, SimSiteGraph};
use crate::config::{BackendKind, Config, ExecLimits};
use crate::pool::{CapabilityDescriptor, CapabilityHandler, Registry};
use crate::sandbox::{self, Sandbox, StubSandbox};
use crate::tools::{execute_code, read_parse, search, ExecuteCodeTool, ReadParseTool, SearchTool};
use crate::trace::{first_divergence, read_trace, TraceError, TraceRecord, TraceSink};
use crate::trajectory::UserQuery;

#[derive(Debug, Error)]
pub enum SetupError {
    #[error("backend: {0}")]
    Backend(String),
    #[error("capability {name}: {detail}")]
    Capability { name: String, detail: String },
}

fn cap_err(name: &str) -> impl Fn(String) -> SetupError + '_ {
    move |detail| SetupError::Capability { name: name.to_string(), detail }
}

/// Registers every capability whose configuration table is present.
pub fn build_registry(config: &Config) -> Result<Registry, SetupError> {
    let mut registry = Registry::new(config.timeouts, config.observation_cap);
    let caps = &config.capabilities;
    let mut register = |descriptor: CapabilityDescriptor, handler: Arc<dyn CapabilityHandler>| {
        let name = descriptor.name.clone();
        registry.register(descriptor, handler).map_err(|e| SetupError::Capability { name, detail: e.to_string() })
    };

    if let Some(c) = &caps.search {
        let tool = SearchTool::from_config(c).map_err(cap_err(search::CAPABILITY_NAME))?;
        register(search::descriptor(), Arc::new(tool))?;
    }
    if let Some(c) = &caps.read_parse {
        let tool = ReadParseTool::from_config(c).map_err(cap_err(read_parse::CAPABILITY_NAME))?;
        register(read_parse::descriptor(), Arc::new(tool))?;
    }
    if let Some(c) = &caps.execute_code {
        let sb: Arc<dyn Sandbox> = sandbox::from_config(c).map_err(cap_err(execute_code::CAPABILITY_NAME))?.into();
        register(execute_code::descriptor(), Arc::new(ExecuteCodeTool::new(sb, c.limits)))?;
    }
    if let Some(c) = &caps.browser {
        let site = SimSiteGraph::load(&c.site).map_err(|e| cap_err(browser::CAPABILITY_NAME)(e.to_string()))?;
        register(browser::descriptor(), Arc::new(BrowserCapability::new(Arc::new(site), c.pdf_page_chars)))?;
    }
    if let Some(c) = &caps.data_analysis {
        let sandbox_cfg = c.sandbox.as_ref().or(caps.execute_code.as_ref());
        let (sb, limits): (Arc<dyn Sandbox>, ExecLimits) = match sandbox_cfg {
            Some(s) => (sandbox::from_config(s).map_err(cap_err(analysis::CAPABILITY_NAME))?.into(), s.limits),
            None => (Arc::new(StubSandbox::default()), ExecLimits::default()),
        };
        register(analysis::descriptor(), Arc::new(DataAnalysisCapability::new(sb, limits)))?;
    }
    Ok(registry)
}

pub fn build_backend(config: &Config) -> Result<Arc<dyn ChatBackend>, SetupError> {
    match config.backend.kind {
        BackendKind::Scripted => {
            let path = config
                .backend
                .fixture
                .as_ref()
                .ok_or_else(|| SetupError::Backend("scripted backend needs backend.fixture".into()))?;
            let b = ScriptedBackend::from_file(path).map_err(|e| SetupError::Backend(e.to_string()))?;
            Ok(Arc::new(b))
        }
        BackendKind::Http => {
            let http = config
                .backend
                .http
                .clone()
                .ok_or_else(|| SetupError::Backend("http backend needs a [backend.http] table".into()))?;
            Ok(Arc::new(HttpBackend::new(http).map_err(|e| SetupError::Backend(e.to_string()))?))
        }
    }
}

/// Builds registry and backend from `config` and runs one query.
pub fn run_query(config: Config, query: UserQuery, trace: TraceSink, trace_ref: &str) -> Result<RunOutcome, SetupError> {
    let registry = build_registry(&config)?;
    let backend = build_backend(&config)?;
    Ok(Agent::new(config, Arc::new(registry), backend).run(query, trace, trace_ref))
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Setup(#[from] SetupError),
}

#[derive(Debug)]
pub struct ReplayReport {
    pub recorded: Vec<TraceRecord>,
    pub replayed: Vec<TraceRecord>,
    /// Index (0-based) and description of the first mismatch.
    pub divergence: Option<(usize, String)>,
}

impl ReplayReport {
    pub fn is_identical(&self) -> bool {
        self.divergence.is_none()
    }
}

/// Re-runs a recorded trace with its configuration and query, serving
/// model replies from the recording, and compares the two traces.
pub fn replay_records(recorded: Vec<TraceRecord>) -> Result<ReplayReport, ReplayError> {
    let Some(TraceRecord::Run(header)) = recorded.first() else {
        return Err(TraceError::Incomplete("trace does not start with a run record".into()).into());
    };
    let Some(TraceRecord::Final(last)) = recorded.last() else {
        return Err(TraceError::Incomplete("trace does not end with a final record".into()).into());
    };
    let registry = build_registry(&header.config)?;
    let backend = Arc::new(ReplayBackend::from_records(&recorded));
    let sink = TraceSink::memory();
    Agent::new(header.config.clone(), Arc::new(registry), backend).run(
        header.query.clone(),
        sink.clone(),
        last.report.trace_ref.clone(),
    );
    let replayed = sink.records();
    let divergence = first_divergence(&recorded, &replayed);
    Ok(ReplayReport { recorded, replayed, divergence })
}

pub fn replay_file(path: &Path) -> Result<ReplayReport, ReplayError> {
    replay_records(read_trace(path)?)
}
