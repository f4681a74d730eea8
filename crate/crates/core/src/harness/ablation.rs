//! Ablation variants and their comparison table.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::batch::{run_batch, BatchError, BatchSpec, GatewayFactory};
use super::metrics::AgentMetrics;
use crate::engine::RunOutcome;
use crate::model::{EvidenceKind, RunConfig, StudyInput};
use crate::tools::{MockEnv, Registry, ToolConfig};

#[derive(Debug, Error)]
pub enum AblationError {
    #[error("unknown ablation variant {0:?} (expected one of full, no_cls, no_loc, no_ret, no_planning, no_extraction)")]
    UnknownVariant(String),
    #[error(transparent)]
    Batch(#[from] BatchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoCls,
    NoLoc,
    NoRet,
    NoPlanning,
    NoExtraction,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 6] = [
        AblationVariant::Full,
        AblationVariant::NoCls,
        AblationVariant::NoLoc,
        AblationVariant::NoRet,
        AblationVariant::NoPlanning,
        AblationVariant::NoExtraction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoCls => "no_cls",
            AblationVariant::NoLoc => "no_loc",
            AblationVariant::NoRet => "no_ret",
            AblationVariant::NoPlanning => "no_planning",
            AblationVariant::NoExtraction => "no_extraction",
        }
    }

    /// Evidence kinds the variant removes from the toolbox.
    pub fn disabled_kinds(self) -> &'static [EvidenceKind] {
        match self {
            AblationVariant::NoCls => &[EvidenceKind::Classification],
            AblationVariant::NoLoc => &[EvidenceKind::Posture, EvidenceKind::Grounding, EvidenceKind::Segmentation],
            AblationVariant::NoRet => &[EvidenceKind::Retrieval],
            _ => &[],
        }
    }

    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        cfg.disabled_tool_kinds.extend(self.disabled_kinds().iter().copied());
        match self {
            AblationVariant::NoPlanning => cfg.skip_planning = true,
            AblationVariant::NoExtraction => cfg.skip_extraction = true,
            _ => {}
        }
        cfg
    }
}

impl FromStr for AblationVariant {
    type Err = AblationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| AblationError::UnknownVariant(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub variant: AblationVariant,
    pub cfg: RunConfig,
    pub outcomes: Vec<RunOutcome>,
    pub metrics: AgentMetrics,
}

pub struct AblationSpec<'a> {
    pub base_cfg: RunConfig,
    pub variants: Vec<AblationVariant>,
    pub cases: Vec<StudyInput>,
    pub tools: &'a ToolConfig,
    pub env: MockEnv,
    pub parallelism: usize,
}

/// Run every variant over the same cases and scripts.
pub fn run_ablation(spec: &AblationSpec<'_>, factory: &GatewayFactory<'_>) -> Result<Vec<VariantResult>, AblationError> {
    let mut results = Vec::with_capacity(spec.variants.len());
    for &variant in &spec.variants {
        let cfg = variant.apply(&spec.base_cfg);
        let registry = Registry::from_config(spec.tools, &cfg.disabled_tool_kinds, spec.env.clone());
        let mut batch = BatchSpec::new(spec.cases.clone(), cfg.clone());
        batch.parallelism = spec.parallelism;
        let report = run_batch(&batch, &registry, factory)?;
        results.push(VariantResult { variant, cfg, outcomes: report.outcomes, metrics: report.metrics });
    }
    Ok(results)
}

/// Aligned plain-text comparison table.
pub fn render_table(results: &[(String, AgentMetrics)]) -> String {
    let header = ["variant", "episodes", "VR", "tool_calls", "FER"];
    let rows: Vec<[String; 5]> = results
        .iter()
        .map(|(name, m)| {
            [
                name.clone(),
                m.episodes.to_string(),
                format!("{:.3}", m.valid_rate),
                format!("{:.2}", m.avg_tool_calls),
                format!("{:.3}", m.format_error_rate),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&header.map(String::from));
    for row in &rows {
        line(row);
    }
    out
}

/// The same table as a JSON array of `{variant, metrics}`.
pub fn table_json(results: &[(String, AgentMetrics)]) -> Value {
    Value::Array(
        results
            .iter()
            .map(|(name, m)| json!({"variant": name, "metrics": m}))
            .collect(),
    )
}

pub fn summarize(results: &[VariantResult]) -> Vec<(String, AgentMetrics)> {
    results.iter().map(|r| (r.variant.as_str().to_owned(), r.metrics)).collect()
}
