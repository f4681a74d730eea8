//! Tool registry: configuration, argument validation and dispatch.

mod config;
mod fixtures;
mod http;
mod mocks;
mod payload;
mod schema;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde_json::Value;

pub use config::{ConfigError, ToolConfig, ToolSpec, Transport, DEFAULT_TOOLS_JSON, DEFAULT_TOOL_TIMEOUT_MS};
pub use fixtures::{BoundingBox, FixtureError, FixtureSet, ImageFixture, LabelProb, Segmentation, View, WebResult};
pub use mocks::{run_mock, MockEnv, MockId};
pub use payload::check_payload;
pub use schema::{json_type_name, render_violations, ArgSchema, ArgType, PropertySpec, Violation};

use crate::json::canonical_json;
use crate::model::{Arguments, EvidenceKind, ToolCall, ToolResult, ToolStatus};
use crate::retrieval::LabelSet;
use http::{HttpOutcome, HttpTools};

/// Per-run parameters a dispatch needs beyond the call itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DispatchContext {
    pub top_k: usize,
}

impl Default for DispatchContext {
    fn default() -> Self {
        Self { top_k: 4 }
    }
}

/// The toolbox offered in one run. Immutable once built.
pub struct Registry {
    tools: Vec<ToolSpec>,
    disabled: Vec<ToolSpec>,
    env: MockEnv,
    http: HttpTools,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry")
            .field("tools", &self.names().collect::<Vec<_>>())
            .field("disabled", &self.disabled.iter().map(|t| &t.name).collect::<Vec<_>>())
            .finish()
    }
}

pub fn validate_args(spec: &ToolSpec, arguments: &Arguments) -> Result<(), Vec<Violation>> {
    spec.schema.validate(arguments)
}

impl Registry {
    pub fn from_config(config: &ToolConfig, disabled_kinds: &BTreeSet<EvidenceKind>, env: MockEnv) -> Self {
        let (disabled, tools) = config.tools.iter().cloned().partition(|t| disabled_kinds.contains(&t.kind));
        Self {
            tools,
            disabled,
            env,
            http: HttpTools::new(),
        }
    }

    pub fn load(path: &Path, disabled_kinds: &BTreeSet<EvidenceKind>, env: MockEnv) -> Result<Self, ConfigError> {
        Ok(Self::from_config(&ToolConfig::load(path)?, disabled_kinds, env))
    }

    pub fn empty(env: MockEnv) -> Self {
        Self {
            tools: Vec::new(),
            disabled: Vec::new(),
            env,
            http: HttpTools::new(),
        }
    }

    pub fn specs(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.iter().map(|t| t.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn spec(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn labels(&self) -> &LabelSet {
        &self.env.labels
    }

    pub fn env(&self) -> &MockEnv {
        &self.env
    }

    /// Never fails: every problem is encoded in the result status.
    pub fn dispatch(&self, call: &ToolCall, ctx: &DispatchContext) -> ToolResult {
        let started = Instant::now();
        let result = self.dispatch_inner(call, ctx);
        result.with_latency(started.elapsed().as_millis() as u64)
    }

    fn dispatch_inner(&self, call: &ToolCall, ctx: &DispatchContext) -> ToolResult {
        let Some(spec) = self.spec(&call.tool_name) else {
            let diagnostic = match self.disabled.iter().find(|t| t.name == call.tool_name) {
                Some(t) => format!(
                    "unknown tool {:?}: tools of kind {} are disabled in this run",
                    call.tool_name, t.kind
                ),
                None => format!("unknown tool {:?}", call.tool_name),
            };
            let mut result = ToolResult::failed(call.call_id, ToolStatus::ValidationError, diagnostic);
            result.hallucinated_tool = true;
            return result;
        };
        if let Err(violations) = validate_args(spec, &call.arguments) {
            return ToolResult::failed(call.call_id, ToolStatus::ValidationError, render_violations(&violations));
        }
        let payload: Value = match &spec.transport {
            Transport::Builtin { mock } => match run_mock(*mock, &call.arguments, &self.env, ctx.top_k) {
                Ok(p) => p,
                Err(d) => return ToolResult::failed(call.call_id, ToolStatus::ToolError, d),
            },
            Transport::Http { endpoint } => {
                match self.http.call(endpoint, &spec.name, &call.arguments, spec.timeout_ms) {
                    HttpOutcome::Ok(p) => p,
                    HttpOutcome::Failed(status, d) => return ToolResult::failed(call.call_id, status, d),
                }
            }
        };
        if let Err(d) = check_payload(spec.kind, &payload, &self.env.labels) {
            return ToolResult::failed(
                call.call_id,
                ToolStatus::ToolError,
                format!("payload breaks the {} contract: {d}", spec.kind),
            );
        }
        ToolResult::ok(call.call_id, payload)
    }

    /// The planner's tool menu, one stanza per tool in load order.
    pub fn tools_prompt(&self) -> String {
        if self.tools.is_empty() {
            return "(no tools available)\n".to_owned();
        }
        let mut out = String::new();
        for (i, tool) in self.tools.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "### {} [{}]", tool.name, tool.kind);
            let _ = writeln!(out, "{}", tool.description);
            if tool.schema.properties.is_empty() {
                out.push_str("arguments: none\n");
                continue;
            }
            out.push_str("arguments:\n");
            for (name, prop) in &tool.schema.properties {
                let need = if tool.schema.is_required(name) { "required" } else { "optional" };
                let _ = write!(out, "  - {name} ({}, {need}", prop.ty);
                if let Some(allowed) = &prop.allowed {
                    let values: Vec<String> = allowed.iter().map(canonical_json).collect();
                    let _ = write!(out, ", one of: {}", values.join(", "));
                }
                out.push(')');
                if !prop.description.is_empty() {
                    let _ = write!(out, ": {}", prop.description);
                }
                out.push('\n');
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use std::sync::Arc;

    fn env() -> MockEnv {
        let labels = LabelSet::chexpert();
        let fixtures = FixtureSet::parse(
            r#"{"images":{"f1":{"classification":[{"label":"Cardiomegaly","prob":0.91}],
                "grounding":{"Atelectasis":[{"x0":0.1,"y0":0.5,"x1":0.4,"y1":0.9}]}}}}"#,
            &labels,
        )
        .unwrap();
        MockEnv { fixtures: Arc::new(fixtures), labels, ..MockEnv::default() }
    }

    fn registry(disabled: &[EvidenceKind]) -> Registry {
        Registry::from_config(&ToolConfig::default_tools(), &disabled.iter().copied().collect(), env())
    }

    fn call(id: u64, tool: &str, args: Value) -> ToolCall {
        ToolCall { call_id: id, round: 1, tool_name: tool.into(), arguments: args.as_object().unwrap().clone() }
    }

    #[test]
    fn disabled_kind_is_excluded() {
        let r = registry(&[EvidenceKind::Retrieval]);
        assert_eq!(r.len(), 5);
        assert!(r.spec("retriever").is_none());
        assert!(!r.tools_prompt().contains("### retriever"));
        let res = r.dispatch(&call(3, "retriever", json!({"image": "f1", "labels": []})), &DispatchContext::default());
        assert_eq!(res.status, ToolStatus::ValidationError);
        assert!(res.hallucinated_tool);
        assert!(res.diagnostic.unwrap().contains("disabled"));
    }

    #[test]
    fn unknown_tool() {
        let res = registry(&[]).dispatch(&call(7, "xray_magic", json!({})), &DispatchContext::default());
        assert_eq!(res.call_id, 7);
        assert_eq!(res.status, ToolStatus::ValidationError);
        assert!(res.hallucinated_tool);
        assert_eq!(res.payload, None);
    }

    #[test]
    fn validation_gate() {
        let res = registry(&[]).dispatch(&call(1, "grounder", json!({"image": "f1"})), &DispatchContext::default());
        assert_eq!(res.status, ToolStatus::ValidationError);
        assert!(!res.hallucinated_tool);
        let res = registry(&[]).dispatch(
            &call(2, "grounder", json!({"image": "f1", "disease": "Atelectasis"})),
            &DispatchContext::default(),
        );
        assert_eq!(res.status, ToolStatus::Ok);
        assert_eq!(res.payload.unwrap()["boxes"].as_array().unwrap().len(), 1);
    }

    #[test]
    fn mock_failure_is_tool_error() {
        let res = registry(&[]).dispatch(&call(1, "classifier", json!({"image": "nope"})), &DispatchContext::default());
        assert_eq!(res.status, ToolStatus::ToolError);
    }

    #[test]
    fn prompt_rendering() {
        let r = registry(&[]);
        let p = r.tools_prompt();
        assert_eq!(p, r.tools_prompt());
        assert!(p.starts_with("### classifier [classification]\n"));
        assert!(p.contains("  - image (string, required)"));
        assert!(p.contains("one of: \"No Finding\""));
        assert_eq!(Registry::empty(env()).tools_prompt(), "(no tools available)\n");
    }
}
