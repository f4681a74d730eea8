//! Deterministic stand-in backend that replays a script.
//!
//! Script files hold one emission per line. `\n` inside a line stands for a
//! newline, `\t` for a tab and `\\` for a backslash; any other backslash is
//! kept literally. Empty lines are skipped.

use std::path::Path;
use std::sync::Mutex;

use super::{Backend, BackendConfig, ChatMessage, GatewayError};

pub fn decode_script_line(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

pub fn encode_script_line(emission: &str) -> String {
    let mut out = String::with_capacity(emission.len());
    for c in emission.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => {}
            c => out.push(c),
        }
    }
    out
}

/// Single-trajectory backend: each call returns the next scripted emission.
#[derive(Debug)]
pub struct ScriptedBackend {
    lines: Vec<String>,
    cursor: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn new<I, S>(lines: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            lines: lines.into_iter().map(Into::into).collect(),
            cursor: Mutex::new(0),
        }
    }

    pub fn parse(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(|l| l.trim_end_matches('\r'))
                .filter(|l| !l.is_empty())
                .map(decode_script_line),
        )
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::Script {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self::parse(&text))
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn consumed(&self) -> usize {
        *self.cursor.lock().expect("script cursor poisoned")
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, _messages: &[ChatMessage], _cfg: &BackendConfig) -> Result<String, GatewayError> {
        let mut cursor = self.cursor.lock().expect("script cursor poisoned");
        let line = self
            .lines
            .get(*cursor)
            .cloned()
            .ok_or(GatewayError::ScriptExhausted(self.lines.len()))?;
        *cursor += 1;
        Ok(line)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes() {
        assert_eq!(decode_script_line(r"a\nb\tc\\n\q"), "a\nb\tc\\n\\q");
        let s = "FINDINGS:\n- x [E1]\\ y";
        assert_eq!(decode_script_line(&encode_script_line(s)), s);
    }

    #[test]
    fn parse_skips_blank_lines() {
        let backend = ScriptedBackend::parse("one\n\ntwo\\nlines\r\n");
        assert_eq!(backend.len(), 2);
        let cfg = BackendConfig::script("x");
        assert_eq!(backend.complete(&[], &cfg).unwrap(), "one");
        assert_eq!(backend.complete(&[], &cfg).unwrap(), "two\nlines");
        assert_eq!(backend.consumed(), 2);
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            ScriptedBackend::from_file(Path::new("/nonexistent/script.txt")),
            Err(GatewayError::Script { .. })
        ));
    }
}
