//! Run configuration, loaded from a single TOML file.
//!
//! Every section and key is optional; omitted values take the defaults
//! below. Unknown keys are rejected. Relative paths are resolved against
//! the directory holding the config file. Secrets are never stored here,
//! only the names of the environment variables that hold them.
//!
//! ```toml
//! [budget]
//! max_tool_calls = 75
//! max_wall_clock_secs = 5400
//! max_subagent_steps = 10
//!
//! [sampling]
//! temperature = 1.0
//! top_p = 0.95
//!
//! [backend]
//! kind = "scripted"            # or "http"
//! fixture = "replies.jsonl"
//! # [backend.http]
//! # base_url = "https://api.example.com/v1"
//! # model = "some-model"
//! # api_key_env = "API_KEY"
//!
//! [memory]
//! enabled = true
//!
//! [supervisor]
//! enabled = true
//!
//! [capabilities.search]
//! provider = "fixture"
//! fixture = "search_index.json"
//!
//! [capabilities.browser]
//! site = "site.json"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{HttpBackendConfig, Sampling};
use crate::memory::MemoryConfig;
use crate::pool::DispatchTimeouts;
use crate::supervisor::SupervisorConfig;
use crate::trajectory::RunBudget;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetConfig {
    pub max_tool_calls: u32,
    pub max_wall_clock_secs: u64,
    pub max_subagent_steps: u32,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        let b = RunBudget::default();
        Self {
            max_tool_calls: b.max_tool_calls,
            max_wall_clock_secs: b.max_wall_clock.as_secs(),
            max_subagent_steps: b.max_subagent_steps,
        }
    }
}

impl BudgetConfig {
    pub fn to_budget(self) -> RunBudget {
        RunBudget {
            max_tool_calls: self.max_tool_calls,
            max_wall_clock: std::time::Duration::from_secs(self.max_wall_clock_secs),
            max_subagent_steps: self.max_subagent_steps,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Scripted,
    Http,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Scripted fixture (JSONL).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixture: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub http: Option<HttpBackendConfig>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Live,
    #[default]
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub provider: ProviderKind,
    /// JSON object mapping query strings to ranked `{url, title, snippet}` lists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixture: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    pub top_k: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { provider: ProviderKind::Fixture, fixture: None, endpoint: None, api_key_env: None, top_k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReadParseConfig {
    pub provider: ProviderKind,
    /// JSON object mapping urls to markdown, for the fixture provider.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixture: Option<PathBuf>,
    /// JSON object mapping pdf urls or file names to converted markdown.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pdf_store: Option<PathBuf>,
    pub max_chars: usize,
    pub timeout_secs: u64,
}

impl Default for ReadParseConfig {
    fn default() -> Self {
        Self { provider: ProviderKind::Fixture, fixture: None, pdf_store: None, max_chars: 30_000, timeout_secs: 60 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SandboxMode {
    #[default]
    Stub,
    Runner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExecLimits {
    pub cpu_seconds: u64,
    pub memory_mb: u64,
    pub wall_clock_seconds: u64,
}

impl Default for ExecLimits {
    fn default() -> Self {
        Self { cpu_seconds: 30, memory_mb: 1024, wall_clock_seconds: 60 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SandboxConfig {
    pub mode: SandboxMode,
    /// Command line that starts one runner process per request.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub runner_command: Vec<String>,
    /// JSONL of canned feedback rules for stub mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stub_fixture: Option<PathBuf>,
    pub limits: ExecLimits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrowserConfig {
    /// Simulated site graph document.
    pub site: PathBuf,
    #[serde(default = "default_pdf_page_chars")]
    pub pdf_page_chars: usize,
}

fn default_pdf_page_chars() -> usize {
    4000
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataAnalysisConfig {
    /// Sandbox for generated scripts; defaults to the `execute_code` one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sandbox: Option<SandboxConfig>,
}

/// The capability set. A capability is enabled by its table being present.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CapabilitiesConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub read_parse: Option<ReadParseConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub execute_code: Option<SandboxConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub browser: Option<BrowserConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_analysis: Option<DataAnalysisConfig>,
}

impl CapabilitiesConfig {
    pub fn is_empty(&self) -> bool {
        self.search.is_none()
            && self.read_parse.is_none()
            && self.execute_code.is_none()
            && self.browser.is_none()
            && self.data_analysis.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub budget: BudgetConfig,
    pub sampling: Sampling,
    pub backend: BackendConfig,
    pub memory: MemoryConfig,
    pub supervisor: SupervisorConfig,
    pub timeouts: DispatchTimeouts,
    pub observation_cap: usize,
    pub capabilities: CapabilitiesConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            budget: BudgetConfig::default(),
            sampling: Sampling::default(),
            backend: BackendConfig::default(),
            memory: MemoryConfig::default(),
            supervisor: SupervisorConfig::default(),
            timeouts: DispatchTimeouts::default(),
            observation_cap: 20_000,
            capabilities: CapabilitiesConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let mut config: Config =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), message: e.to_string() })?;
        config.validate()?;
        let base = origin.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.budget.to_budget().is_valid() {
            return Err(ConfigError::Invalid("budget values must all be positive".into()));
        }
        if !self.sampling.is_valid() {
            return Err(ConfigError::Invalid(format!(
                "sampling out of range: temperature={} top_p={}",
                self.sampling.temperature, self.sampling.top_p
            )));
        }
        if self.observation_cap == 0 {
            return Err(ConfigError::Invalid("observation_cap must be positive".into()));
        }
        Ok(())
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(f) = &mut self.backend.fixture {
            fix(f);
        }
        let caps = &mut self.capabilities;
        if let Some(f) = caps.search.as_mut().and_then(|s| s.fixture.as_mut()) {
            fix(f);
        }
        if let Some(r) = &mut caps.read_parse {
            r.fixture.iter_mut().chain(r.pdf_store.iter_mut()).for_each(fix);
        }
        if let Some(f) = caps.execute_code.as_mut().and_then(|s| s.stub_fixture.as_mut()) {
            fix(f);
        }
        if let Some(f) = caps
            .data_analysis
            .as_mut()
            .and_then(|d| d.sandbox.as_mut())
            .and_then(|s| s.stub_fixture.as_mut())
        {
            fix(f);
        }
        if let Some(b) = &mut caps.browser {
            fix(&mut b.site);
        }
    }
}

pub fn load_config(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    Config::from_toml(&text, path)
}
