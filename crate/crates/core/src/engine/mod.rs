//! The four-stage pipeline: planning, the bounded tool loop, evidence
//! extraction and evidence-conditioned report generation.
//!
//! A round is one backend emission that parses to an invocation or a final
//! answer. Malformed emissions do not consume a round; each one triggers a
//! corrective message and at most `max_parse_retries_per_round` of them are
//! tolerated before the round fails.

mod extract;
mod report;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use extract::{extract_chain, memory_from_results};
pub use report::{check_citations, citations, parse_report};

use crate::gateway::{parse_decision, render_tool_result, ChatMessage, Gateway, GatewayError, ParseError, Phase, PlannerDecision};
use crate::memory::{EvidenceChain, EvidenceItem, EvidenceMemory, MemoryError};
use crate::model::{Arguments, CallId, EvidenceKind, ExecutionPlan, ModelError, Report, RunConfig, StudyInput, ToolCall};
use crate::tools::{DispatchContext, Registry};
use crate::trajectory::{Clock, Event, Recorder, RunStatus, Stage, SystemClock, TrajectoryLog};

pub const PLANNER_PROMPT: &str = include_str!("../../prompts/planner.txt");
pub const ACTOR_PROMPT: &str = include_str!("../../prompts/actor.txt");
pub const EXTRACTOR_PROMPT: &str = include_str!("../../prompts/extractor.txt");
pub const REPORTER_PROMPT: &str = include_str!("../../prompts/reporter.txt");

/// Classifier probability from which a label is routed to retrieval when
/// `auto_route_labels` is on.
pub const AUTO_ROUTE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid study: {0}")]
    InvalidStudy(ModelError),
    #[error("invalid run config: {0}")]
    InvalidConfig(ModelError),
    #[error("operation needs phase {expected:?} but the engine is in {found:?}")]
    WrongPhase { expected: EnginePhase, found: EnginePhase },
    #[error("backend failed: {0}")]
    Backend(#[from] GatewayError),
    #[error("no valid plan after {attempts} emissions")]
    PlanningFailed { attempts: u32 },
    #[error("round {round}: no parseable decision after {attempts} emissions")]
    ParseRetriesExhausted { round: u32, attempts: u32 },
    #[error("no final answer within {t_max} rounds")]
    RoundsExhausted { t_max: u32 },
    #[error("report rejected: {0}")]
    ReportRejected(String),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

impl EngineError {
    pub fn status(&self) -> RunStatus {
        match self {
            EngineError::RoundsExhausted { .. } => RunStatus::InvalidExhausted,
            _ => RunStatus::Failed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnginePhase {
    Planning,
    Acting,
    Extracting,
    Reporting,
    Done,
    Failed,
}

impl EnginePhase {
    pub fn can_move_to(self, next: EnginePhase) -> bool {
        use EnginePhase::*;
        matches!(
            (self, next),
            (Planning, Acting) | (Acting, Extracting) | (Extracting, Reporting) | (Reporting, Done)
        ) || (next == Failed && !matches!(self, Done | Failed))
    }

    fn stage(self) -> Stage {
        match self {
            EnginePhase::Planning => Stage::Planning,
            EnginePhase::Acting => Stage::Acting,
            EnginePhase::Extracting => Stage::Extraction,
            EnginePhase::Reporting | EnginePhase::Done | EnginePhase::Failed => Stage::Reporting,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineState {
    pub phase: EnginePhase,
    pub round: u32,
    pub plan: Option<ExecutionPlan>,
    pub memory: EvidenceMemory,
    /// Acting-stage exchanges after the fixed system and task messages.
    pub messages: Vec<ChatMessage>,
    pub parse_retries_this_round: u32,
    pub next_call_id: CallId,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub tool_calls: u64,
    pub format_errors: u64,
    pub rounds_used: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub report: Option<Report>,
    pub chain: Option<EvidenceChain>,
    pub memory: EvidenceMemory,
    pub log: TrajectoryLog,
    pub stats: RunStats,
}

/// Phase the failure happened in, the chain if extraction completed, and the error.
type Abort = (EnginePhase, Option<EvidenceChain>, EngineError);

fn corrective(error: &ParseError, phase: Phase) -> String {
    let expected = match phase {
        Phase::Planning => "{\"plan\": [...]}",
        Phase::Acting => "{\"action\": ..., \"args\": {...}} or {\"final\": ...}",
    };
    format!("FORMAT_ERROR: {error}. Reply with exactly one ```evi block holding {expected}.")
}

fn task_message(study: &StudyInput) -> String {
    let mut text = format!("Instruction: {}\nImages:\n", study.instruction);
    for image in &study.images {
        text.push_str(&format!("- {image}\n"));
    }
    text
}

/// Drives one trajectory. Single-threaded; shares only the registry and gateway.
pub struct Engine<'a> {
    study: &'a StudyInput,
    registry: &'a Registry,
    gateway: &'a Gateway,
    cfg: &'a RunConfig,
    state: EngineState,
    recorder: Recorder,
}

impl<'a> Engine<'a> {
    pub fn new(
        study: &'a StudyInput,
        registry: &'a Registry,
        gateway: &'a Gateway,
        cfg: &'a RunConfig,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, EngineError> {
        study.validate().map_err(EngineError::InvalidStudy)?;
        cfg.validate().map_err(EngineError::InvalidConfig)?;
        let phase = if cfg.skip_planning { EnginePhase::Acting } else { EnginePhase::Planning };
        Ok(Self {
            study,
            registry,
            gateway,
            cfg,
            state: EngineState {
                phase,
                round: 0,
                plan: None,
                memory: EvidenceMemory::new(),
                messages: Vec::new(),
                parse_retries_this_round: 0,
                next_call_id: 1,
            },
            recorder: Recorder::new(study.study_id.clone(), clock),
        })
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn log(&self) -> &TrajectoryLog {
        self.recorder.log()
    }

    fn expect_phase(&self, expected: EnginePhase) -> Result<(), EngineError> {
        if self.state.phase == expected {
            Ok(())
        } else {
            Err(EngineError::WrongPhase { expected, found: self.state.phase })
        }
    }

    fn move_to(&mut self, next: EnginePhase) {
        debug_assert!(self.state.phase.can_move_to(next), "{:?} -> {next:?}", self.state.phase);
        self.state.phase = next;
    }

    fn fail(&mut self, error: EngineError) -> EngineError {
        self.move_to(EnginePhase::Failed);
        error
    }

    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, EngineError> {
        match self.gateway.complete(messages) {
            Ok(text) => Ok(text),
            Err(e) => Err(self.fail(e.into())),
        }
    }

    fn system_with_tools(&self, prompt: &str) -> ChatMessage {
        ChatMessage::system(format!("{}\n## Tools\n{}", prompt, self.registry.tools_prompt()))
    }

    /// Ask for an execution plan, re-asking on malformed emissions.
    pub fn plan(&mut self) -> Result<ExecutionPlan, EngineError> {
        self.expect_phase(EnginePhase::Planning)?;
        let mut messages = vec![
            self.system_with_tools(PLANNER_PROMPT),
            ChatMessage::user(task_message(self.study)),
        ];
        let mut attempt = 0;
        loop {
            attempt += 1;
            let raw = self.complete(&messages)?;
            self.recorder.record(Event::PlannerRawEmission { stage: Stage::Planning, round: 0, text: raw.clone() });
            match parse_decision(&raw, Phase::Planning) {
                PlannerDecision::Plan { plan } => {
                    self.recorder.record(Event::PlanEmitted { plan: plan.clone() });
                    self.state.plan = Some(plan.clone());
                    self.move_to(EnginePhase::Acting);
                    return Ok(plan);
                }
                PlannerDecision::Malformed { error, .. } => {
                    self.recorder.record(Event::ParseFailure { stage: Stage::Planning, round: 0, attempt, error: error.clone() });
                    if attempt > self.cfg.max_parse_retries_per_round {
                        return Err(self.fail(EngineError::PlanningFailed { attempts: attempt }));
                    }
                    messages.push(ChatMessage::assistant(raw));
                    messages.push(ChatMessage::user(corrective(&error, Phase::Planning)));
                }
                other => unreachable!("planning phase parsed to {other:?}"),
            }
        }
    }

    fn acting_messages(&self) -> Vec<ChatMessage> {
        let mut task = task_message(self.study);
        match &self.state.plan {
            Some(plan) => {
                task.push_str("\n## Plan\n");
                task.push_str(&plan.render());
            }
            None => task.push_str("\n## Plan\n(no plan: decide the steps yourself)\n"),
        }
        let mut messages = vec![
            self.system_with_tools(ACTOR_PROMPT),
            ChatMessage::user(task).with_attachments(self.study.images.clone()),
        ];
        messages.extend(self.state.messages.iter().cloned());
        let memory = if self.state.memory.is_empty() {
            "(empty)\n".to_owned()
        } else {
            self.state.memory.render()
        };
        messages.push(ChatMessage::user(format!("## Evidence memory\n{memory}")));
        messages
    }

    fn route_labels(&self, tool_name: &str, arguments: &mut Arguments) {
        let is_retrieval = self
            .registry
            .spec(tool_name)
            .is_some_and(|s| s.kind == EvidenceKind::Retrieval);
        if !self.cfg.auto_route_labels || !is_retrieval || arguments.contains_key("labels") {
            return;
        }
        let labels = self.registry.labels();
        let mut routed = BTreeSet::new();
        for item in self.state.memory.items().iter().filter(|i| i.kind == EvidenceKind::Classification) {
            for finding in item.payload["findings"].as_array().into_iter().flatten() {
                let prob = finding["prob"].as_f64().unwrap_or(0.0);
                if let Some(index) = finding["label"].as_str().and_then(|l| labels.index_of(l)) {
                    if prob >= AUTO_ROUTE_THRESHOLD {
                        routed.insert(index);
                    }
                }
            }
        }
        let routed: Vec<Value> = routed
            .into_iter()
            .filter_map(|i| labels.get(i).map(|l| Value::String(l.to_owned())))
            .collect();
        arguments.insert("labels".into(), Value::Array(routed));
    }

    /// Handle one acting-stage emission: a tool round, a final answer, or a
    /// malformed emission.
    pub fn step(&mut self) -> Result<(), EngineError> {
        self.expect_phase(EnginePhase::Acting)?;
        if self.state.round >= self.cfg.t_max {
            return Err(self.fail(EngineError::RoundsExhausted { t_max: self.cfg.t_max }));
        }
        let attempted = self.state.round + 1;
        let raw = self.complete(&self.acting_messages())?;
        self.recorder.record(Event::PlannerRawEmission { stage: Stage::Acting, round: attempted, text: raw.clone() });
        let decision = parse_decision(&raw, Phase::Acting);
        match decision {
            PlannerDecision::Malformed { error, .. } => {
                self.state.parse_retries_this_round += 1;
                let attempt = self.state.parse_retries_this_round;
                self.recorder.record(Event::ParseFailure { stage: Stage::Acting, round: attempted, attempt, error: error.clone() });
                if attempt > self.cfg.max_parse_retries_per_round {
                    return Err(self.fail(EngineError::ParseRetriesExhausted { round: attempted, attempts: attempt }));
                }
                self.state.messages.push(ChatMessage::assistant(raw));
                self.state.messages.push(ChatMessage::user(corrective(&error, Phase::Acting)));
            }
            PlannerDecision::Invoke { ref tool_name, ref arguments, .. } => {
                let mut arguments = arguments.clone();
                let tool_name = tool_name.clone();
                self.begin_round(attempted, &decision);
                self.route_labels(&tool_name, &mut arguments);
                let call = ToolCall { call_id: self.state.next_call_id, round: attempted, tool_name, arguments };
                self.state.next_call_id += 1;
                self.recorder.record(Event::ToolDispatched { call: call.clone() });
                let result = self.registry.dispatch(&call, &DispatchContext { top_k: self.cfg.top_k });
                self.recorder.record(Event::ToolReturned { result: result.clone() });
                if let (true, Some(spec), Some(payload)) =
                    (result.is_ok(), self.registry.spec(&call.tool_name), result.payload.clone())
                {
                    let item = EvidenceItem {
                        evidence_id: self.state.memory.next_id(),
                        kind: spec.kind,
                        payload,
                        source_call_id: call.call_id,
                    };
                    if let Err(e) = self.state.memory.append(item.clone(), &result) {
                        return Err(self.fail(e.into()));
                    }
                    self.recorder.record(Event::EvidenceAppended { item });
                }
                self.state.messages.push(ChatMessage::assistant(raw));
                self.state.messages.push(render_tool_result(&result));
            }
            PlannerDecision::Final { .. } => {
                self.begin_round(attempted, &decision);
                self.move_to(EnginePhase::Extracting);
            }
            PlannerDecision::Plan { .. } => unreachable!("acting phase never yields a plan"),
        }
        Ok(())
    }

    fn begin_round(&mut self, round: u32, decision: &PlannerDecision) {
        self.state.round = round;
        self.state.parse_retries_this_round = 0;
        self.recorder.record(Event::DecisionParsed { round, decision: decision.clone() });
    }

    /// Build the evidence chain, optionally with a backend summary.
    pub fn extract(&mut self) -> Result<EvidenceChain, EngineError> {
        self.expect_phase(EnginePhase::Extracting)?;
        let mut chain = extract_chain(&self.state.memory, self.cfg.skip_extraction);
        if self.cfg.summarize_evidence && !self.cfg.skip_extraction {
            let messages = [
                ChatMessage::system(EXTRACTOR_PROMPT),
                ChatMessage::user(format!("## Evidence chain\n{}", chain.render())),
            ];
            let raw = self.complete(&messages)?;
            self.recorder.record(Event::PlannerRawEmission { stage: Stage::Extraction, round: 0, text: raw.clone() });
            chain.summary = Some(raw.trim().to_owned());
        }
        self.recorder.record(Event::ChainExtracted { chain: chain.clone() });
        self.move_to(EnginePhase::Reporting);
        Ok(chain)
    }

    /// Generate the report from the instruction and chain alone.
    pub fn generate(&mut self, chain: &EvidenceChain) -> Result<Report, EngineError> {
        self.expect_phase(EnginePhase::Reporting)?;
        let messages = generation_messages(self.study, chain);
        let raw = self.complete(&messages)?;
        self.recorder.record(Event::PlannerRawEmission { stage: Stage::Reporting, round: 0, text: raw.clone() });
        let report = parse_report(&raw);
        if let Err(reason) = check_citations(&report, chain, self.cfg.strict_evidence) {
            return Err(self.fail(EngineError::ReportRejected(reason)));
        }
        self.recorder.record(Event::ReportEmitted { report: report.clone() });
        self.move_to(EnginePhase::Done);
        Ok(report)
    }

    fn stats(&self) -> RunStats {
        let counts = self.recorder.log().counts();
        RunStats {
            tool_calls: counts.tool_calls,
            format_errors: counts.parse_failures,
            rounds_used: self.state.round,
        }
    }

    fn drive(&mut self) -> Result<(EvidenceChain, Report), Abort> {
        if self.state.phase == EnginePhase::Planning {
            self.plan().map_err(|e| (EnginePhase::Planning, None, e))?;
        }
        while self.state.phase == EnginePhase::Acting {
            self.step().map_err(|e| (EnginePhase::Acting, None, e))?;
        }
        let chain = self.extract().map_err(|e| (EnginePhase::Extracting, None, e))?;
        match self.generate(&chain) {
            Ok(report) => Ok((chain, report)),
            Err(e) => Err((EnginePhase::Reporting, Some(chain), e)),
        }
    }

    /// Run every remaining stage and close the log with its terminal event.
    pub fn finish(mut self) -> RunOutcome {
        let (status, chain, report) = match self.drive() {
            Ok((chain, report)) => (RunStatus::Valid, Some(chain), Some(report)),
            Err((phase, chain, error)) => {
                let status = error.status();
                self.recorder.record(Event::Aborted { status, stage: phase.stage(), reason: error.to_string() });
                (status, chain, None)
            }
        };
        let stats = self.stats();
        RunOutcome {
            status,
            report,
            chain,
            memory: self.state.memory,
            log: self.recorder.into_log(),
            stats,
        }
    }
}

/// Messages of the generation stage: the reporter prompt, the instruction and
/// the rendered chain. Images and acting history are never included.
pub fn generation_messages(study: &StudyInput, chain: &EvidenceChain) -> [ChatMessage; 2] {
    let chain_text = if chain.entries.is_empty() && chain.summary.is_none() {
        "(no evidence)\n".to_owned()
    } else {
        chain.render()
    };
    [
        ChatMessage::system(REPORTER_PROMPT),
        ChatMessage::user(format!("Instruction: {}\n\n## Evidence chain\n{chain_text}", study.instruction)),
    ]
}

pub fn run_with_clock(
    study: &StudyInput,
    registry: &Registry,
    gateway: &Gateway,
    cfg: &RunConfig,
    clock: Arc<dyn Clock>,
) -> Result<RunOutcome, EngineError> {
    Ok(Engine::new(study, registry, gateway, cfg, clock)?.finish())
}

/// Run the whole pipeline. Stage failures come back as a non-valid outcome;
/// only an invalid study or config is an error.
pub fn run(study: &StudyInput, registry: &Registry, gateway: &Gateway, cfg: &RunConfig) -> Result<RunOutcome, EngineError> {
    run_with_clock(study, registry, gateway, cfg, Arc::new(SystemClock::new()))
}
