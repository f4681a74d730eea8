//! Chat-completion client.
//!
//! Request: `POST <endpoint>` with
//! `{"model", "messages": [{"role", "content"}], "temperature", "max_tokens", "stream": false}`.
//! `content` is a string, or a list of `{"type":"text"}` / `{"type":"image_url"}`
//! parts when the message carries image attachments. Tool-role messages are
//! sent as `user` messages prefixed with `[tool result <call_id>]`, since tool
//! invocation is parsed from plain text rather than the server's tool API.
//!
//! Response: `{"choices": [{"message": {"content": "..."}}]}`.

use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};

use super::{Backend, BackendConfig, ChatMessage, GatewayError, ImageTransport, Role};

pub struct HttpBackend {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(url: &str, timeout_ms: u64) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(timeout_ms))
            .build()
            .map_err(|e| GatewayError::BackendUnavailable(e.to_string()))?;
        Ok(Self {
            url: url.to_owned(),
            client,
        })
    }
}

fn mime_for(path: &str) -> &'static str {
    let lower = path.to_ascii_lowercase();
    if lower.ends_with(".png") {
        "image/png"
    } else if lower.ends_with(".jpg") || lower.ends_with(".jpeg") {
        "image/jpeg"
    } else {
        "application/octet-stream"
    }
}

fn image_part(reference: &str, transport: ImageTransport) -> Result<Value, GatewayError> {
    let url = match transport {
        ImageTransport::Path => {
            let abs = std::path::absolute(reference).unwrap_or_else(|_| reference.into());
            format!("file://{}", abs.display())
        }
        ImageTransport::Base64 => {
            let bytes = std::fs::read(reference).map_err(|e| {
                GatewayError::InvalidRequest(format!("cannot read attachment {reference}: {e}"))
            })?;
            format!(
                "data:{};base64,{}",
                mime_for(reference),
                base64::engine::general_purpose::STANDARD.encode(bytes)
            )
        }
    };
    Ok(json!({"type": "image_url", "image_url": {"url": url}}))
}

pub(crate) fn wire_message(msg: &ChatMessage, transport: ImageTransport) -> Result<Value, GatewayError> {
    let (role, text) = match msg.role {
        Role::System => ("system", msg.text.clone()),
        Role::User => ("user", msg.text.clone()),
        Role::Assistant => ("assistant", msg.text.clone()),
        Role::Tool => (
            "user",
            format!("[tool result {}]\n{}", msg.call_id.unwrap_or_default(), msg.text),
        ),
    };
    if msg.attachments.is_empty() {
        return Ok(json!({"role": role, "content": text}));
    }
    let mut parts = vec![json!({"type": "text", "text": text})];
    for reference in &msg.attachments {
        parts.push(image_part(reference, transport)?);
    }
    Ok(json!({"role": role, "content": parts}))
}

pub(crate) fn request_body(messages: &[ChatMessage], cfg: &BackendConfig) -> Result<Value, GatewayError> {
    let messages = messages
        .iter()
        .map(|m| wire_message(m, cfg.image_transport))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(json!({
        "model": cfg.model,
        "messages": messages,
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_output_tokens,
        "stream": false,
    }))
}

impl Backend for HttpBackend {
    fn complete(&self, messages: &[ChatMessage], cfg: &BackendConfig) -> Result<String, GatewayError> {
        let body = request_body(messages, cfg)?;
        let response = self.client.post(&self.url).json(&body).send().map_err(|e| {
            if e.is_timeout() {
                GatewayError::BackendTimeout(cfg.timeout_ms)
            } else {
                GatewayError::BackendUnavailable(e.to_string())
            }
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| {
            if e.is_timeout() {
                GatewayError::BackendTimeout(cfg.timeout_ms)
            } else {
                GatewayError::BackendUnavailable(e.to_string())
            }
        })?;
        if !status.is_success() {
            let snippet: String = text.chars().take(200).collect();
            return Err(GatewayError::BackendUnavailable(format!("HTTP {status}: {snippet}")));
        }
        let value: Value =
            serde_json::from_str(&text).map_err(|e| GatewayError::Protocol(e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| GatewayError::Protocol("missing choices[0].message.content".into()))
    }
}
