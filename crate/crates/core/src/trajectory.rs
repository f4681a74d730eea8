//! Ordered, replayable record of one episode and its line-delimited file format.
//!
//! Each line of a `.traj.jsonl` file is one object with the fields
//! `seq` (dense from 1), `study`, `event` (event name), `payload` (event body)
//! and `ts` (milliseconds since the episode started). Keys inside `payload`
//! are sorted. The canonical form sets `ts` and every tool `latency_ms` to 0,
//! so two runs of a deterministic episode compare byte for byte.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::gateway::{ParseError, PlannerDecision};
use crate::json::canonical_json;
use crate::memory::{EvidenceChain, EvidenceItem};
use crate::model::{ExecutionPlan, Report, ToolCall, ToolResult};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrajectoryError {
    #[error("trajectory has no terminal event")]
    Incomplete,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Planning,
    Acting,
    Extraction,
    Reporting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Valid,
    InvalidExhausted,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Valid => "valid",
            RunStatus::InvalidExhausted => "invalid_exhausted",
            RunStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", content = "payload")]
pub enum Event {
    PlanEmitted {
        plan: ExecutionPlan,
    },
    /// Verbatim backend output, thought trace included.
    PlannerRawEmission {
        stage: Stage,
        round: u32,
        text: String,
    },
    DecisionParsed {
        round: u32,
        decision: PlannerDecision,
    },
    ParseFailure {
        stage: Stage,
        round: u32,
        attempt: u32,
        error: ParseError,
    },
    ToolDispatched {
        call: ToolCall,
    },
    ToolReturned {
        result: ToolResult,
    },
    EvidenceAppended {
        item: EvidenceItem,
    },
    ChainExtracted {
        chain: EvidenceChain,
    },
    ReportEmitted {
        report: Report,
    },
    Aborted {
        status: RunStatus,
        stage: Stage,
        reason: String,
    },
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::PlanEmitted { .. } => "PlanEmitted",
            Event::PlannerRawEmission { .. } => "PlannerRawEmission",
            Event::DecisionParsed { .. } => "DecisionParsed",
            Event::ParseFailure { .. } => "ParseFailure",
            Event::ToolDispatched { .. } => "ToolDispatched",
            Event::ToolReturned { .. } => "ToolReturned",
            Event::EvidenceAppended { .. } => "EvidenceAppended",
            Event::ChainExtracted { .. } => "ChainExtracted",
            Event::ReportEmitted { .. } => "ReportEmitted",
            Event::Aborted { .. } => "Aborted",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Event::ReportEmitted { .. } | Event::Aborted { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub seq: u64,
    pub ts: u64,
    pub event: Event,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogCounts {
    pub tool_calls: u64,
    pub parse_failures: u64,
    pub hallucinated_tools: u64,
    /// Raw emissions in the planning and acting stages.
    pub planner_emissions: u64,
    pub rounds_used: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub study_id: String,
    events: Vec<LoggedEvent>,
}

impl TrajectoryLog {
    pub fn new(study_id: impl Into<String>) -> Self {
        Self {
            study_id: study_id.into(),
            events: Vec::new(),
        }
    }

    pub fn events(&self) -> &[LoggedEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Append an event with the next sequence number. Nothing may follow a terminal event.
    pub fn push(&mut self, event: Event, ts: u64) -> u64 {
        assert!(
            !self.is_complete(),
            "event {} pushed after the terminal event",
            event.name()
        );
        let seq = self.events.len() as u64 + 1;
        self.events.push(LoggedEvent { seq, ts, event });
        seq
    }

    pub fn is_complete(&self) -> bool {
        self.events.last().is_some_and(|e| e.event.is_terminal())
    }

    pub fn status(&self) -> Option<RunStatus> {
        match self.events.last().map(|e| &e.event) {
            Some(Event::ReportEmitted { .. }) => Some(RunStatus::Valid),
            Some(Event::Aborted { status, .. }) => Some(*status),
            _ => None,
        }
    }

    pub fn count(&self, name: &str) -> usize {
        self.events.iter().filter(|e| e.event.name() == name).count()
    }

    pub fn counts(&self) -> LogCounts {
        let mut counts = LogCounts::default();
        for logged in &self.events {
            match &logged.event {
                Event::ToolDispatched { .. } => counts.tool_calls += 1,
                Event::ParseFailure { .. } => counts.parse_failures += 1,
                Event::ToolReturned { result } if result.hallucinated_tool => {
                    counts.hallucinated_tools += 1
                }
                Event::PlannerRawEmission {
                    stage: Stage::Planning | Stage::Acting,
                    ..
                } => counts.planner_emissions += 1,
                Event::DecisionParsed { round, .. } => {
                    counts.rounds_used = counts.rounds_used.max(*round)
                }
                _ => {}
            }
        }
        counts
    }

    /// Copy with timing fields zeroed.
    pub fn canonical(&self) -> Self {
        let mut log = self.clone();
        for logged in &mut log.events {
            logged.ts = 0;
            if let Event::ToolReturned { result } = &mut logged.event {
                result.latency_ms = 0;
            }
        }
        log
    }

    pub fn serialize(&self) -> Result<Vec<u8>, TrajectoryError> {
        if !self.is_complete() {
            return Err(TrajectoryError::Incomplete);
        }
        let mut out = String::new();
        let study = Value::String(self.study_id.clone()).to_string();
        for logged in &self.events {
            let tagged = serde_json::to_value(&logged.event).expect("events always serialize");
            let payload = tagged.get("payload").cloned().unwrap_or(Value::Object(Map::new()));
            out.push_str(&format!(
                "{{\"seq\":{},\"study\":{},\"event\":\"{}\",\"payload\":{},\"ts\":{}}}\n",
                logged.seq,
                study,
                logged.event.name(),
                canonical_json(&payload),
                logged.ts
            ));
        }
        Ok(out.into_bytes())
    }

    pub fn canonical_bytes(&self) -> Result<Vec<u8>, TrajectoryError> {
        self.canonical().serialize()
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, TrajectoryError> {
        let text = std::str::from_utf8(bytes).map_err(|e| TrajectoryError::Parse {
            line: 0,
            message: format!("not utf-8: {e}"),
        })?;
        let mut log: Option<TrajectoryLog> = None;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| TrajectoryError::Parse { line: line_no, message };
            if line.trim().is_empty() {
                continue;
            }
            let mut obj = match serde_json::from_str::<Value>(line) {
                Ok(Value::Object(obj)) => obj,
                Ok(_) => return Err(err("line is not an object".into())),
                Err(e) => return Err(err(e.to_string())),
            };
            let seq = obj
                .get("seq")
                .and_then(Value::as_u64)
                .ok_or_else(|| err("missing or invalid seq".into()))?;
            let ts = obj
                .get("ts")
                .and_then(Value::as_u64)
                .ok_or_else(|| err("missing or invalid ts".into()))?;
            let study = obj
                .get("study")
                .and_then(Value::as_str)
                .ok_or_else(|| err("missing study".into()))?
                .to_owned();
            let mut tagged = Map::new();
            tagged.insert(
                "event".into(),
                obj.remove("event").ok_or_else(|| err("missing event".into()))?,
            );
            tagged.insert(
                "payload".into(),
                obj.remove("payload").ok_or_else(|| err("missing payload".into()))?,
            );
            let event: Event =
                serde_json::from_value(Value::Object(tagged)).map_err(|e| err(e.to_string()))?;

            let log = log.get_or_insert_with(|| TrajectoryLog::new(study.clone()));
            if log.study_id != study {
                return Err(err(format!("study {study:?} differs from {:?}", log.study_id)));
            }
            if log.is_complete() {
                return Err(err("event after terminal event".into()));
            }
            let expected = log.events.len() as u64 + 1;
            if seq != expected {
                return Err(err(format!("seq {seq} out of order; expected {expected}")));
            }
            log.push(event, ts);
        }
        let log = log.ok_or(TrajectoryError::Incomplete)?;
        if !log.is_complete() {
            return Err(TrajectoryError::Incomplete);
        }
        Ok(log)
    }
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

/// Milliseconds elapsed since construction.
#[derive(Debug)]
pub struct SystemClock {
    start: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self { start: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }
}

/// Always reports the same instant.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now_ms(&self) -> u64 {
        self.0
    }
}

/// Single writer of one trajectory; stamps events with its clock.
pub struct Recorder {
    log: TrajectoryLog,
    clock: Arc<dyn Clock>,
}

impl Recorder {
    pub fn new(study_id: impl Into<String>, clock: Arc<dyn Clock>) -> Self {
        Self {
            log: TrajectoryLog::new(study_id),
            clock,
        }
    }

    pub fn record(&mut self, event: Event) -> u64 {
        let ts = self.clock.now_ms();
        self.log.push(event, ts)
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn log(&self) -> &TrajectoryLog {
        &self.log
    }

    pub fn into_log(self) -> TrajectoryLog {
        self.log
    }
}
