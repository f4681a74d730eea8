//! Tool configuration file.
//!
//! ```json
//! {"tools": [{"name": "grounder", "kind": "grounding", "description": "...",
//!             "transport": {"type": "builtin", "mock": "grounder"},
//!             "schema": {"properties": {"disease": {"type": "string", "description": "...", "enum": [...]}},
//!                        "required": ["disease"]},
//!             "timeout_ms": 30000}]}
//! ```
//!
//! `transport` is either `{"type": "builtin", "mock": <mock id>}` or
//! `{"type": "http", "endpoint": <url>}`. `timeout_ms` defaults to 30000.

use std::path::Path;

use indexmap::IndexMap;
use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use super::mocks::MockId;
use super::schema::{ArgSchema, ArgType, PropertySpec};
use crate::model::EvidenceKind;

pub const DEFAULT_TOOL_TIMEOUT_MS: u64 = 30_000;

/// Default toolbox shipped with the engine.
pub const DEFAULT_TOOLS_JSON: &str = include_str!("../../assets/tools.default.json");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("cannot read tool config {path}: {message}")]
    Io { path: String, message: String },
    #[error("tool config is not valid JSON: {0}")]
    Json(String),
    #[error("{path}: duplicate tool name {name:?}")]
    DuplicateTool { path: String, name: String },
    #[error("{path}: unknown evidence kind {kind:?}")]
    UnknownKind { path: String, kind: String },
    #[error("{path}: bad schema: {reason}")]
    BadSchema { path: String, reason: String },
    #[error("{path}: {reason}")]
    BadField { path: String, reason: String },
    #[error("tool config declares no tools")]
    NoTools,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Transport {
    Builtin { mock: MockId },
    Http { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolSpec {
    pub name: String,
    pub kind: EvidenceKind,
    pub description: String,
    pub transport: Transport,
    pub schema: ArgSchema,
    pub timeout_ms: u64,
}

/// Every tool a config file declares, in file order, before any kind is disabled.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolConfig {
    pub tools: Vec<ToolSpec>,
}

fn valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    chars.next().is_some_and(|c| c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value, ConfigError> {
    obj.get(key).ok_or_else(|| ConfigError::BadField {
        path: format!("{path}.{key}"),
        reason: "missing".into(),
    })
}

fn string_field(obj: &Map<String, Value>, key: &str, path: &str) -> Result<String, ConfigError> {
    field(obj, key, path)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| ConfigError::BadField {
            path: format!("{path}.{key}"),
            reason: "must be a string".into(),
        })
}

fn parse_schema(value: &Value, path: &str) -> Result<ArgSchema, ConfigError> {
    let bad = |path: String, reason: &str| ConfigError::BadSchema { path, reason: reason.into() };
    let obj = value.as_object().ok_or_else(|| bad(path.into(), "must be an object"))?;
    for key in obj.keys() {
        if key != "properties" && key != "required" {
            return Err(bad(format!("{path}.{key}"), "unknown schema key"));
        }
    }
    let mut properties = IndexMap::new();
    if let Some(props) = obj.get("properties") {
        let props = props
            .as_object()
            .ok_or_else(|| bad(format!("{path}.properties"), "must be an object"))?;
        for (name, prop) in props {
            let ppath = format!("{path}.properties.{name}");
            let prop = prop.as_object().ok_or_else(|| bad(ppath.clone(), "must be an object"))?;
            for key in prop.keys() {
                if !matches!(key.as_str(), "type" | "description" | "enum") {
                    return Err(bad(format!("{ppath}.{key}"), "unknown property key"));
                }
            }
            let ty = prop
                .get("type")
                .and_then(Value::as_str)
                .ok_or_else(|| bad(format!("{ppath}.type"), "missing or not a string"))?;
            let ty = ArgType::parse(ty).ok_or_else(|| bad(format!("{ppath}.type"), "unknown type"))?;
            let description = match prop.get("description") {
                None => String::new(),
                Some(Value::String(s)) => s.clone(),
                Some(_) => return Err(bad(format!("{ppath}.description"), "must be a string")),
            };
            let allowed = match prop.get("enum") {
                None => None,
                Some(Value::Array(values)) => {
                    if values.is_empty() {
                        return Err(bad(format!("{ppath}.enum"), "must not be empty"));
                    }
                    if let Some(i) = values.iter().position(|v| !ty.matches(v)) {
                        return Err(bad(format!("{ppath}.enum[{i}]"), "does not match the declared type"));
                    }
                    Some(values.clone())
                }
                Some(_) => return Err(bad(format!("{ppath}.enum"), "must be an array")),
            };
            properties.insert(name.clone(), PropertySpec { ty, description, allowed });
        }
    }
    let mut required = Vec::new();
    if let Some(req) = obj.get("required") {
        let req = req
            .as_array()
            .ok_or_else(|| bad(format!("{path}.required"), "must be an array"))?;
        for (i, name) in req.iter().enumerate() {
            let rpath = format!("{path}.required[{i}]");
            let name = name.as_str().ok_or_else(|| bad(rpath.clone(), "must be a string"))?;
            if !properties.contains_key(name) {
                return Err(bad(rpath, "names an undeclared property"));
            }
            if required.iter().any(|r| r == name) {
                return Err(bad(rpath, "listed twice"));
            }
            required.push(name.to_owned());
        }
    }
    Ok(ArgSchema { properties, required })
}

fn parse_transport(value: &Value, kind: EvidenceKind, path: &str) -> Result<Transport, ConfigError> {
    let bad = |path: String, reason: String| ConfigError::BadField { path, reason };
    let obj = value
        .as_object()
        .ok_or_else(|| bad(path.into(), "must be an object".into()))?;
    match string_field(obj, "type", path)?.as_str() {
        "builtin" => {
            let id = string_field(obj, "mock", path)?;
            let mock = MockId::parse(&id).ok_or_else(|| bad(format!("{path}.mock"), format!("unknown mock {id:?}")))?;
            if let Some(natural) = mock.kind() {
                if natural != kind {
                    return Err(bad(
                        format!("{path}.mock"),
                        format!("mock {id:?} produces {natural} evidence but the tool declares {kind}"),
                    ));
                }
            }
            Ok(Transport::Builtin { mock })
        }
        "http" => {
            let endpoint = string_field(obj, "endpoint", path)?;
            if !(endpoint.starts_with("http://") || endpoint.starts_with("https://")) {
                return Err(bad(format!("{path}.endpoint"), "must be an http(s) URL".into()));
            }
            Ok(Transport::Http { endpoint })
        }
        other => Err(bad(format!("{path}.type"), format!("unknown transport {other:?}"))),
    }
}

fn parse_tool(value: &Value, path: &str) -> Result<ToolSpec, ConfigError> {
    let obj = value.as_object().ok_or_else(|| ConfigError::BadField {
        path: path.into(),
        reason: "must be an object".into(),
    })?;
    let name = string_field(obj, "name", path)?;
    if !valid_name(&name) {
        return Err(ConfigError::BadField {
            path: format!("{path}.name"),
            reason: format!("{name:?} must match [a-z][a-z0-9_]*"),
        });
    }
    let kind_str = string_field(obj, "kind", path)?;
    let kind: EvidenceKind = kind_str.parse().map_err(|_| ConfigError::UnknownKind {
        path: format!("{path}.kind"),
        kind: kind_str.clone(),
    })?;
    let description = string_field(obj, "description", path)?;
    let transport = parse_transport(field(obj, "transport", path)?, kind, &format!("{path}.transport"))?;
    let schema = parse_schema(field(obj, "schema", path)?, &format!("{path}.schema"))?;
    let timeout_ms = match obj.get("timeout_ms") {
        None => DEFAULT_TOOL_TIMEOUT_MS,
        Some(v) => v.as_u64().filter(|&t| t > 0).ok_or_else(|| ConfigError::BadField {
            path: format!("{path}.timeout_ms"),
            reason: "must be a positive integer".into(),
        })?,
    };
    Ok(ToolSpec {
        name,
        kind,
        description,
        transport,
        schema,
        timeout_ms,
    })
}

impl ToolConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let root: Value = serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
        let tools = root
            .get("tools")
            .and_then(Value::as_array)
            .ok_or_else(|| ConfigError::BadField {
                path: "tools".into(),
                reason: "missing or not an array".into(),
            })?;
        let mut specs: Vec<ToolSpec> = Vec::with_capacity(tools.len());
        for (i, tool) in tools.iter().enumerate() {
            let path = format!("tools[{i}]");
            let spec = parse_tool(tool, &path)?;
            if specs.iter().any(|s| s.name == spec.name) {
                return Err(ConfigError::DuplicateTool {
                    path: format!("{path}.name"),
                    name: spec.name,
                });
            }
            specs.push(spec);
        }
        if specs.is_empty() {
            return Err(ConfigError::NoTools);
        }
        Ok(Self { tools: specs })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn default_tools() -> Self {
        Self::parse(DEFAULT_TOOLS_JSON).expect("bundled tool config is valid")
    }
}
