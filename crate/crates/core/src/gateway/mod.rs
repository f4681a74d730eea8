//! Uniform access to chat-capable backends plus the emission grammar.
//!
//! Two backends ship: [`ScriptedBackend`], which replays a script file one
//! emission per call, and [`HttpBackend`], which speaks the common
//! chat-completion wire protocol. Anything implementing [`Backend`] can be
//! plugged in.

mod grammar;
mod http;
mod scripted;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::CallId;

pub use grammar::{parse_decision, render_decision, render_tool_result, ParseError, Phase, PlannerDecision};
pub use http::HttpBackend;
pub use scripted::{decode_script_line, encode_script_line, ScriptedBackend};

pub const ENV_BACKEND_URL: &str = "EVI_BACKEND_URL";
pub const ENV_MODEL: &str = "EVI_MODEL";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend timed out after {0} ms")]
    BackendTimeout(u64),
    #[error("script exhausted after {0} emissions")]
    ScriptExhausted(usize),
    #[error("backend response malformed: {0}")]
    Protocol(String),
    #[error("context of {chars} chars exceeds the limit of {limit}")]
    ContextLength { chars: usize, limit: usize },
    #[error("cannot read script {path}: {message}")]
    Script { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<String>,
    /// Correlates a tool message with its call; set iff role is tool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_id: Option<CallId>,
}

impl ChatMessage {
    fn with_role(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
            attachments: Vec::new(),
            call_id: None,
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self::with_role(Role::System, text)
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self::with_role(Role::User, text)
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self::with_role(Role::Assistant, text)
    }

    pub fn tool(call_id: CallId, text: impl Into<String>) -> Self {
        Self {
            call_id: Some(call_id),
            ..Self::with_role(Role::Tool, text)
        }
    }

    pub fn with_attachments(mut self, attachments: Vec<String>) -> Self {
        self.attachments = attachments;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendTarget {
    Endpoint(String),
    Script(PathBuf),
}

/// How image attachments travel to the backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageTransport {
    /// `file://` references, for servers that share the filesystem.
    #[default]
    Path,
    /// Inline `data:` URLs with base64 file contents.
    Base64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub target: BackendTarget,
    pub model: String,
    pub timeout_ms: u64,
    pub max_output_tokens: u32,
    pub temperature: f64,
    #[serde(default)]
    pub image_transport: ImageTransport,
    /// Reject requests whose total text exceeds this many chars. History is never truncated.
    #[serde(default)]
    pub max_context_chars: Option<usize>,
}

impl BackendConfig {
    fn with_target(target: BackendTarget) -> Self {
        Self {
            target,
            model: "default".into(),
            timeout_ms: 120_000,
            max_output_tokens: 1024,
            temperature: 0.0,
            image_transport: ImageTransport::default(),
            max_context_chars: None,
        }
    }

    pub fn endpoint(url: impl Into<String>) -> Self {
        Self::with_target(BackendTarget::Endpoint(url.into()))
    }

    pub fn script(path: impl Into<PathBuf>) -> Self {
        Self::with_target(BackendTarget::Script(path.into()))
    }

    /// Endpoint config from `EVI_BACKEND_URL` / `EVI_MODEL`, if the URL is set.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(ENV_BACKEND_URL).ok().filter(|u| !u.is_empty())?;
        let mut cfg = Self::endpoint(url);
        if let Ok(model) = std::env::var(ENV_MODEL) {
            if !model.is_empty() {
                cfg.model = model;
            }
        }
        Some(cfg)
    }
}

pub trait Backend: Send + Sync {
    /// Return the single assistant emission for `messages`.
    fn complete(&self, messages: &[ChatMessage], cfg: &BackendConfig) -> Result<String, GatewayError>;
}

#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    config: BackendConfig,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, config: BackendConfig) -> Self {
        Self { backend, config }
    }

    pub fn from_config(config: BackendConfig) -> Result<Self, GatewayError> {
        let backend: Arc<dyn Backend> = match &config.target {
            BackendTarget::Script(path) => Arc::new(ScriptedBackend::from_file(path)?),
            BackendTarget::Endpoint(url) => Arc::new(HttpBackend::new(url, config.timeout_ms)?),
        };
        Ok(Self { backend, config })
    }

    /// Scripted gateway over in-memory emissions.
    pub fn scripted<I, S>(lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            backend: Arc::new(ScriptedBackend::new(lines)),
            config: BackendConfig::script("<memory>"),
        }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn complete(&self, messages: &[ChatMessage]) -> Result<String, GatewayError> {
        let first = messages
            .first()
            .ok_or_else(|| GatewayError::InvalidRequest("message list is empty".into()))?;
        if first.role != Role::System {
            return Err(GatewayError::InvalidRequest("first message must have role system".into()));
        }
        if let Some(bad) = messages.iter().find(|m| (m.role == Role::Tool) != m.call_id.is_some()) {
            return Err(GatewayError::InvalidRequest(format!(
                "{:?} message with call_id {:?}",
                bad.role, bad.call_id
            )));
        }
        if let Some(limit) = self.config.max_context_chars {
            let chars: usize = messages.iter().map(|m| m.text.chars().count()).sum();
            if chars > limit {
                return Err(GatewayError::ContextLength { chars, limit });
            }
        }
        self.backend.complete(messages, &self.config)
    }
}
