use std::path::PathBuf;
use std::sync::Arc;

use serde_json::Value;

use crate::config::ExecLimits;
use crate::pool::{
    CapabilityDescriptor, CapabilityHandler, CapabilityKind, CostHint, InvocationContext, ParamType, ParameterSpec,
    ToolFailure,
};
use crate::sandbox::{ExecRequest, ManifestFile, Sandbox};
use crate::trajectory::Arguments;

pub const CAPABILITY_NAME: &str = "execute_code";

/// Runs a Python script in the sandbox. Script failures come back as
/// tool errors carrying the full feedback.
pub struct ExecuteCodeTool {
    sandbox: Arc<dyn Sandbox>,
    limits: ExecLimits,
}

impl ExecuteCodeTool {
    pub fn new(sandbox: Arc<dyn Sandbox>, limits: ExecLimits) -> Self {
        Self { sandbox, limits }
    }
}

pub fn descriptor() -> CapabilityDescriptor {
    CapabilityDescriptor {
        name: CAPABILITY_NAME.into(),
        kind: CapabilityKind::BasicTool,
        description: "Run a Python script in an isolated sandbox. Listed files are copied into its working \
                      directory. Returns stdout, stderr and produced files."
            .into(),
        parameters: vec![
            ParameterSpec::required("script", ParamType::String, "Python source to run"),
            ParameterSpec::optional("files", ParamType::StringList, "Paths of input files to provide"),
        ],
        cost_hint: CostHint::LowLatency,
    }
}

impl CapabilityHandler for ExecuteCodeTool {
    fn invoke(&self, args: &Arguments, _ctx: &InvocationContext) -> Result<String, ToolFailure> {
        let script = args.get("script").and_then(Value::as_str).unwrap_or_default().to_string();
        let mut manifest = Vec::new();
        for f in args.get("files").and_then(Value::as_array).into_iter().flatten().filter_map(Value::as_str) {
            let path = PathBuf::from(f);
            manifest.push(
                ManifestFile::from_path(&path).map_err(|e| ToolFailure::tool_error(format!("cannot read {f}: {e}")))?,
            );
        }
        let feedback = self
            .sandbox
            .execute(&ExecRequest { script, manifest, limits: self.limits })
            .map_err(|e| ToolFailure::tool_error(e.to_string()))?;
        if feedback.is_ok() {
            Ok(feedback.render())
        } else {
            let detail = feedback.error.clone().unwrap_or_else(|| "script failed".into());
            Err(ToolFailure::tool_error(detail).with_payload(feedback.render()))
        }
    }
}
