//! Client side of the code-execution sandbox.
//!
//! Runner mode starts one process per request and speaks a framed JSON
//! protocol over its stdin and stdout. Each frame is a 4-byte big-endian
//! unsigned length followed by that many bytes of UTF-8 JSON.
//!
//! Request frame (client to runner):
//!
//! ```json
//! {"script": "print(1)",
//!  "manifest": [{"name": "data.csv", "content_b64": "YSxiCjEsMgo="}],
//!  "limits": {"cpu_seconds": 30, "memory_mb": 1024, "wall_clock_seconds": 60}}
//! ```
//!
//! Response frame (runner to client):
//!
//! ```json
//! {"status": "ok" | "error", "stdout": "...", "stderr": "...",
//!  "error": null | "...", "error_class": null | "runtime" | "resource limit" | "protocol",
//!  "artifacts": ["out.txt"]}
//! ```
//!
//! The client kills the runner one second after the wall-clock limit and
//! reports a `resource limit` error.

use std::io::{Read, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::config::{ExecLimits, SandboxConfig, SandboxMode};

pub const RESOURCE_LIMIT: &str = "resource limit";
const KILL_GRACE: Duration = Duration::from_secs(1);
const MAX_FRAME: u32 = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub name: String,
    pub content_b64: String,
}

impl ManifestFile {
    pub fn from_bytes(name: impl Into<String>, bytes: &[u8]) -> Self {
        Self { name: name.into(), content_b64: base64::engine::general_purpose::STANDARD.encode(bytes) }
    }

    /// Reads a file into a manifest entry named after its file name.
    pub fn from_path(path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(Self::from_bytes(name, &bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecRequest {
    pub script: String,
    pub manifest: Vec<ManifestFile>,
    pub limits: ExecLimits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecFeedback {
    pub status: ExecStatus,
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub error_class: Option<String>,
    #[serde(default)]
    pub artifacts: Vec<String>,
}

impl ExecFeedback {
    pub fn ok(stdout: impl Into<String>) -> Self {
        Self {
            status: ExecStatus::Ok,
            stdout: stdout.into(),
            stderr: String::new(),
            error: None,
            error_class: None,
            artifacts: Vec::new(),
        }
    }

    pub fn error(class: &str, message: impl Into<String>) -> Self {
        Self {
            status: ExecStatus::Error,
            stdout: String::new(),
            stderr: String::new(),
            error: Some(message.into()),
            error_class: Some(class.to_string()),
            artifacts: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }

    /// Fills in a missing error message so that an error always carries one.
    pub fn normalized(mut self) -> Self {
        if self.status == ExecStatus::Error && self.error.as_deref().is_none_or(|e| e.trim().is_empty()) {
            let fallback = if self.stderr.trim().is_empty() { "script failed without an error message" } else { self.stderr.trim() };
            self.error = Some(fallback.to_string());
        }
        self
    }

    pub fn render(&self) -> String {
        let mut out = format!("status: {}\n", if self.is_ok() { "ok" } else { "error" });
        if !self.stdout.is_empty() {
            out.push_str(&format!("stdout:\n{}\n", self.stdout.trim_end()));
        }
        if !self.stderr.is_empty() {
            out.push_str(&format!("stderr:\n{}\n", self.stderr.trim_end()));
        }
        if let Some(e) = &self.error {
            let class = self.error_class.as_deref().map(|c| format!(" ({c})")).unwrap_or_default();
            out.push_str(&format!("error{class}: {e}\n"));
        }
        if !self.artifacts.is_empty() {
            out.push_str(&format!("artifacts: {}\n", self.artifacts.join(", ")));
        }
        out
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum SandboxError {
    #[error("sandbox unreachable: {0}")]
    Unreachable(String),
    #[error("sandbox protocol violation: {0}")]
    Protocol(String),
}

pub trait Sandbox: Send + Sync {
    fn execute(&self, request: &ExecRequest) -> Result<ExecFeedback, SandboxError>;
}

/// Canned feedback rule for stub mode. A rule without `contains` matches
/// every script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(flatten)]
    pub feedback: ExecFeedback,
}

/// Offline sandbox answering from rules, first match wins.
#[derive(Debug, Clone, Default)]
pub struct StubSandbox {
    rules: Vec<StubRule>,
}

impl StubSandbox {
    pub fn new(rules: Vec<StubRule>) -> Self {
        Self { rules }
    }

    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            rules.push(serde_json::from_str(line).map_err(|e| format!("stub rule line {}: {e}", i + 1))?);
        }
        Ok(Self { rules })
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_jsonl(&text)
    }
}

impl Sandbox for StubSandbox {
    fn execute(&self, request: &ExecRequest) -> Result<ExecFeedback, SandboxError> {
        let rule = self
            .rules
            .iter()
            .find(|r| r.contains.as_deref().is_none_or(|c| request.script.contains(c)));
        Ok(match rule {
            Some(r) => r.feedback.clone().normalized(),
            None => ExecFeedback::error("runtime", "stub sandbox has no rule for this script"),
        })
    }
}

/// Sandbox backed by a runner subprocess, one process per request.
#[derive(Debug, Clone)]
pub struct RunnerSandbox {
    command: Vec<String>,
}

impl RunnerSandbox {
    pub fn new(command: Vec<String>) -> Result<Self, SandboxError> {
        if command.is_empty() {
            return Err(SandboxError::Unreachable("runner command is empty".into()));
        }
        Ok(Self { command })
    }
}

pub fn write_frame(w: &mut impl Write, payload: &[u8]) -> std::io::Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| std::io::Error::other("frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

pub fn read_frame(r: &mut impl Read) -> std::io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME {
        return Err(std::io::Error::other(format!("frame of {len} bytes exceeds limit")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

impl Sandbox for RunnerSandbox {
    fn execute(&self, request: &ExecRequest) -> Result<ExecFeedback, SandboxError> {
        let payload = serde_json::to_vec(request).map_err(|e| SandboxError::Protocol(e.to_string()))?;
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| SandboxError::Unreachable(format!("cannot start {}: {e}", self.command[0])))?;

        let mut stdin = child.stdin.take().expect("stdin is piped");
        let mut stdout = child.stdout.take().expect("stdout is piped");
        let writer = std::thread::spawn(move || write_frame(&mut stdin, &payload));
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let _ = tx.send(read_frame(&mut stdout));
        });

        let deadline = Duration::from_secs(request.limits.wall_clock_seconds) + KILL_GRACE;
        let started = Instant::now();
        let frame = match rx.recv_timeout(deadline) {
            Ok(frame) => frame,
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return Ok(ExecFeedback::error(
                    RESOURCE_LIMIT,
                    format!("wall-clock limit of {} s exceeded", request.limits.wall_clock_seconds),
                ));
            }
        };
        let _ = writer.join();
        let remaining = deadline.saturating_sub(started.elapsed());
        let wait_until = Instant::now() + remaining.max(Duration::from_millis(100));
        loop {
            match child.try_wait() {
                Ok(Some(_)) => break,
                Ok(None) if Instant::now() < wait_until => std::thread::sleep(Duration::from_millis(10)),
                _ => {
                    let _ = child.kill();
                    let _ = child.wait();
                    break;
                }
            }
        }
        let bytes = frame.map_err(|e| SandboxError::Protocol(format!("no response frame: {e}")))?;
        let feedback: ExecFeedback =
            serde_json::from_slice(&bytes).map_err(|e| SandboxError::Protocol(format!("bad response: {e}")))?;
        Ok(feedback.normalized())
    }
}

/// Builds the sandbox named by a configuration section.
pub fn from_config(cfg: &SandboxConfig) -> Result<Box<dyn Sandbox>, String> {
    match cfg.mode {
        SandboxMode::Stub => match &cfg.stub_fixture {
            Some(path) => Ok(Box::new(StubSandbox::from_file(path)?)),
            None => Ok(Box::new(StubSandbox::default())),
        },
        SandboxMode::Runner => Ok(Box::new(RunnerSandbox::new(cfg.runner_command.clone()).map_err(|e| e.to_string())?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(script: &str) -> ExecRequest {
        ExecRequest { script: script.into(), manifest: vec![], limits: ExecLimits::default() }
    }

    #[test]
    fn frame_round_trip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"{\"a\":1}").unwrap();
        assert_eq!(&buf[..4], &[0, 0, 0, 7]);
        assert_eq!(read_frame(&mut buf.as_slice()).unwrap(), b"{\"a\":1}");
    }

    #[test]
    fn truncated_frame_is_error() {
        let buf = [0u8, 0, 0, 9, b'{'];
        assert!(read_frame(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn stub_first_match_wins() {
        let stub = StubSandbox::from_jsonl(concat!(
            r#"{"contains": "1/0", "status": "error", "stderr": "ZeroDivisionError: division by zero"}"#,
            "\n",
            r#"{"status": "ok", "stdout": "7\n"}"#
        ))
        .unwrap();
        let bad = stub.execute(&request("print(1/0)")).unwrap();
        assert_eq!(bad.status, ExecStatus::Error);
        assert_eq!(bad.error.as_deref(), Some("ZeroDivisionError: division by zero"));
        assert_eq!(stub.execute(&request("print(7)")).unwrap().stdout, "7\n");
    }

    #[test]
    fn stub_without_rules_reports_error() {
        let fb = StubSandbox::default().execute(&request("x")).unwrap();
        assert!(!fb.is_ok() && fb.error.is_some());
    }

    #[test]
    fn missing_runner_is_unreachable() {
        let s = RunnerSandbox::new(vec!["/nonexistent/runner-binary".into()]).unwrap();
        assert!(matches!(s.execute(&request("x")), Err(SandboxError::Unreachable(_))));
    }

    #[test]
    fn error_feedback_always_has_message() {
        let fb = ExecFeedback { status: ExecStatus::Error, stdout: String::new(), stderr: String::new(), error: None, error_class: None, artifacts: vec![] };
        assert!(fb.normalized().error.is_some());
    }
}
