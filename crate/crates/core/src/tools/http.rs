//! Remote tool transport.
//!
//! Request: `POST <endpoint>` with `{"tool": <name>, "arguments": {...}}`.
//! Response: `{"status": "ok", "payload": {...}}` or
//! `{"status": <other>, "diagnostic": "..."}`. A transport error is retried
//! once; a timeout is reported as such without retry.

use std::sync::OnceLock;
use std::time::Duration;

use serde_json::{json, Value};

use crate::model::{Arguments, ToolStatus};

pub(crate) struct HttpTools {
    client: OnceLock<Result<reqwest::blocking::Client, String>>,
}

pub(crate) enum HttpOutcome {
    Ok(Value),
    Failed(ToolStatus, String),
}

impl HttpTools {
    pub(crate) fn new() -> Self {
        Self { client: OnceLock::new() }
    }

    fn client(&self) -> Result<&reqwest::blocking::Client, String> {
        self.client
            .get_or_init(|| reqwest::blocking::Client::builder().build().map_err(|e| e.to_string()))
            .as_ref()
            .map_err(Clone::clone)
    }

    pub(crate) fn call(&self, endpoint: &str, tool: &str, arguments: &Arguments, timeout_ms: u64) -> HttpOutcome {
        let client = match self.client() {
            Ok(c) => c,
            Err(e) => return HttpOutcome::Failed(ToolStatus::ToolError, format!("http client unavailable: {e}")),
        };
        let body = json!({"tool": tool, "arguments": arguments});
        let send = || {
            client
                .post(endpoint)
                .timeout(Duration::from_millis(timeout_ms))
                .json(&body)
                .send()
        };
        let response = match send() {
            Err(e) if e.is_timeout() => return timed_out(timeout_ms),
            Err(_) => match send() {
                Ok(r) => r,
                Err(e) if e.is_timeout() => return timed_out(timeout_ms),
                Err(e) => return HttpOutcome::Failed(ToolStatus::ToolError, format!("transport error: {e}")),
            },
            Ok(r) => r,
        };
        if !response.status().is_success() {
            return HttpOutcome::Failed(ToolStatus::ToolError, format!("endpoint answered HTTP {}", response.status()));
        }
        let value: Value = match response.json() {
            Ok(v) => v,
            Err(e) if e.is_timeout() => return timed_out(timeout_ms),
            Err(e) => return HttpOutcome::Failed(ToolStatus::ToolError, format!("response is not JSON: {e}")),
        };
        interpret(&value)
    }
}

fn timed_out(timeout_ms: u64) -> HttpOutcome {
    HttpOutcome::Failed(ToolStatus::Timeout, format!("no response within {timeout_ms} ms"))
}

fn interpret(value: &Value) -> HttpOutcome {
    let status = value.get("status").and_then(Value::as_str);
    let diagnostic = value.get("diagnostic").and_then(Value::as_str).unwrap_or("no diagnostic given");
    match status {
        Some("ok") => match value.get("payload") {
            Some(p) if !p.is_null() => HttpOutcome::Ok(p.clone()),
            _ => HttpOutcome::Failed(ToolStatus::ToolError, "ok response lacks a payload".into()),
        },
        Some("timeout") => HttpOutcome::Failed(ToolStatus::Timeout, diagnostic.to_owned()),
        Some(other) => HttpOutcome::Failed(ToolStatus::ToolError, format!("{other}: {diagnostic}")),
        None => HttpOutcome::Failed(ToolStatus::ToolError, "response lacks a \"status\" string".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    /// Answers `responses.len()` requests in order and returns the request bodies.
    fn serve(responses: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/tool", listener.local_addr().unwrap());
        let handle = thread::spawn(move || {
            let mut bodies = Vec::new();
            for (code, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {code} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    #[test]
    fn posts_tool_and_arguments() {
        let (url, handle) = serve(vec![(200, r#"{"status":"ok","payload":{"view":"PA"}}"#.into())]);
        let mut args = Arguments::new();
        args.insert("image".into(), json!("f1"));
        let out = HttpTools::new().call(&url, "posture", &args, 5_000);
        assert!(matches!(out, HttpOutcome::Ok(ref p) if p == &json!({"view": "PA"})));
        let bodies = handle.join().unwrap();
        let sent: Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent, json!({"tool": "posture", "arguments": {"image": "f1"}}));
    }

    #[test]
    fn error_statuses() {
        let (url, handle) = serve(vec![
            (500, "{}".into()),
            (200, r#"{"status":"error","diagnostic":"model crashed"}"#.into()),
        ]);
        let tools = HttpTools::new();
        let args = Arguments::new();
        assert!(matches!(tools.call(&url, "t", &args, 5_000), HttpOutcome::Failed(ToolStatus::ToolError, _)));
        match tools.call(&url, "t", &args, 5_000) {
            HttpOutcome::Failed(ToolStatus::ToolError, d) => assert!(d.contains("model crashed")),
            _ => panic!("expected tool_error"),
        }
        handle.join().unwrap();
    }

    #[test]
    fn unreachable_endpoint_is_tool_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let url = format!("http://127.0.0.1:{port}/");
        assert!(matches!(
            HttpTools::new().call(&url, "t", &Arguments::new(), 2_000),
            HttpOutcome::Failed(ToolStatus::ToolError, _)
        ));
    }

    #[test]
    fn interpret_shapes() {
        assert!(matches!(interpret(&json!({"status": "timeout"})), HttpOutcome::Failed(ToolStatus::Timeout, _)));
        assert!(matches!(interpret(&json!({"status": "ok"})), HttpOutcome::Failed(ToolStatus::ToolError, _)));
        assert!(matches!(interpret(&json!({"payload": {}})), HttpOutcome::Failed(ToolStatus::ToolError, _)));
    }
}
