//! Shared domain types: studies, plans, tool calls and results, reports, run configuration.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub type CallId = u64;
pub type EvidenceId = u64;

/// Argument map of a tool call. Keys are kept sorted.
pub type Arguments = Map<String, Value>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("study_id must be non-empty")]
    EmptyStudyId,
    #[error("study {0} has no image references")]
    NoImages(String),
    #[error("plan has no steps")]
    EmptyPlan,
    #[error("plan step {0} has an empty description")]
    EmptyStepDescription(u32),
    #[error("plan step ids must increase from 1; found {found} at position {position}")]
    StepOrder { position: usize, found: u32 },
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("unknown evidence kind {0:?}")]
    UnknownKind(String),
}

/// One radiology case: image references plus the diagnostic instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyInput {
    pub study_id: String,
    pub images: Vec<String>,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_report: Option<String>,
}

impl StudyInput {
    pub fn new(
        study_id: impl Into<String>,
        images: Vec<String>,
        instruction: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let study = Self {
            study_id: study_id.into(),
            images,
            instruction: instruction.into(),
            ground_truth_report: None,
        };
        study.validate()?;
        Ok(study)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.study_id.is_empty() {
            return Err(ModelError::EmptyStudyId);
        }
        if self.images.is_empty() {
            return Err(ModelError::NoImages(self.study_id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub step_id: u32,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suggested_tool: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub steps: Vec<PlanStep>,
}

impl ExecutionPlan {
    /// Build a plan from `(description, suggested_tool)` pairs, numbering steps from 1.
    pub fn from_steps<I, S>(steps: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (S, Option<String>)>,
        S: Into<String>,
    {
        let steps = steps
            .into_iter()
            .enumerate()
            .map(|(i, (description, suggested_tool))| PlanStep {
                step_id: i as u32 + 1,
                description: description.into(),
                suggested_tool,
            })
            .collect();
        let plan = Self { steps };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.steps.is_empty() {
            return Err(ModelError::EmptyPlan);
        }
        for (i, step) in self.steps.iter().enumerate() {
            if step.step_id != i as u32 + 1 {
                return Err(ModelError::StepOrder {
                    position: i,
                    found: step.step_id,
                });
            }
            if step.description.trim().is_empty() {
                return Err(ModelError::EmptyStepDescription(step.step_id));
            }
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(&format!("{}. {}", step.step_id, step.description));
            if let Some(tool) = &step.suggested_tool {
                out.push_str(&format!(" (tool: {tool})"));
            }
            out.push('\n');
        }
        out
    }
}

/// Evidence kinds, declared in canonical chain order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    Classification,
    Posture,
    Grounding,
    Segmentation,
    Retrieval,
    Web,
    Custom,
}

impl EvidenceKind {
    pub const ALL: [EvidenceKind; 7] = [
        EvidenceKind::Classification,
        EvidenceKind::Posture,
        EvidenceKind::Grounding,
        EvidenceKind::Segmentation,
        EvidenceKind::Retrieval,
        EvidenceKind::Web,
        EvidenceKind::Custom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EvidenceKind::Classification => "classification",
            EvidenceKind::Posture => "posture",
            EvidenceKind::Grounding => "grounding",
            EvidenceKind::Segmentation => "segmentation",
            EvidenceKind::Retrieval => "retrieval",
            EvidenceKind::Web => "web",
            EvidenceKind::Custom => "custom",
        }
    }
}

impl fmt::Display for EvidenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvidenceKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EvidenceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ModelError::UnknownKind(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub call_id: CallId,
    pub round: u32,
    pub tool_name: String,
    pub arguments: Arguments,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolStatus {
    Ok,
    ToolError,
    ValidationError,
    Timeout,
}

impl ToolStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ToolStatus::Ok => "ok",
            ToolStatus::ToolError => "tool_error",
            ToolStatus::ValidationError => "validation_error",
            ToolStatus::Timeout => "timeout",
        }
    }
}

/// Outcome of one dispatch. `payload` is present iff `status` is ok; every
/// other status carries a `diagnostic` instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub call_id: CallId,
    pub status: ToolStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    /// Set when the call named a tool the registry does not offer.
    #[serde(default)]
    pub hallucinated_tool: bool,
    pub latency_ms: u64,
}

impl ToolResult {
    pub fn ok(call_id: CallId, payload: Value) -> Self {
        Self {
            call_id,
            status: ToolStatus::Ok,
            payload: Some(payload),
            diagnostic: None,
            hallucinated_tool: false,
            latency_ms: 0,
        }
    }

    pub fn failed(call_id: CallId, status: ToolStatus, diagnostic: impl Into<String>) -> Self {
        debug_assert!(status != ToolStatus::Ok);
        Self {
            call_id,
            status,
            payload: None,
            diagnostic: Some(diagnostic.into()),
            hallucinated_tool: false,
            latency_ms: 0,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ToolStatus::Ok
    }

    pub fn with_latency(mut self, latency_ms: u64) -> Self {
        self.latency_ms = latency_ms;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub text: String,
    pub evidence_ids: Vec<EvidenceId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub findings: Vec<Finding>,
    pub impression: String,
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    pub t_max: u32,
    pub top_k: usize,
    pub max_parse_retries_per_round: u32,
    pub strict_evidence: bool,
    #[serde(default)]
    pub disabled_tool_kinds: BTreeSet<EvidenceKind>,
    #[serde(default)]
    pub skip_planning: bool,
    #[serde(default)]
    pub skip_extraction: bool,
    /// Ask the backend for a free-text summary of the chain after extraction.
    #[serde(default)]
    pub summarize_evidence: bool,
    /// Fill the `labels` argument of retrieval calls from classifier evidence.
    #[serde(default)]
    pub auto_route_labels: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            t_max: 10,
            top_k: 4,
            max_parse_retries_per_round: 2,
            strict_evidence: true,
            disabled_tool_kinds: BTreeSet::new(),
            skip_planning: false,
            skip_extraction: false,
            summarize_evidence: false,
            auto_route_labels: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.t_max < 1 {
            return Err(ModelError::Config("t_max must be >= 1".into()));
        }
        if self.top_k < 1 {
            return Err(ModelError::Config("top_k must be >= 1".into()));
        }
        Ok(())
    }
}
