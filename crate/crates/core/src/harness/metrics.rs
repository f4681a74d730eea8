//! Agent metrics computed purely from trajectory logs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{RunStatus, TrajectoryLog};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no trajectories to score")]
    Empty,
    #[error("trajectory of study {0:?} has no terminal event")]
    Incomplete(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub episodes: u64,
    pub valid_rate: f64,
    pub avg_tool_calls: f64,
    pub format_error_rate: f64,
    pub valid_episodes: u64,
    pub tool_calls: u64,
    /// Parse failures plus calls naming a tool the registry does not offer.
    pub format_errors: u64,
    pub planner_emissions: u64,
}

/// VR, average tool calls and format error rate over `logs`. The format error
/// rate is 0 when no planner emission was made at all.
pub fn compute_metrics(logs: &[TrajectoryLog]) -> Result<AgentMetrics, MetricsError> {
    if logs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (mut valid, mut calls, mut errors, mut emissions) = (0u64, 0u64, 0u64, 0u64);
    for log in logs {
        match log.status() {
            None => return Err(MetricsError::Incomplete(log.study_id.clone())),
            Some(RunStatus::Valid) => valid += 1,
            Some(_) => {}
        }
        let counts = log.counts();
        calls += counts.tool_calls;
        errors += counts.parse_failures + counts.hallucinated_tools;
        emissions += counts.planner_emissions;
    }
    let episodes = logs.len() as u64;
    Ok(AgentMetrics {
        episodes,
        valid_rate: valid as f64 / episodes as f64,
        avg_tool_calls: calls as f64 / episodes as f64,
        format_error_rate: if emissions == 0 { 0.0 } else { errors as f64 / emissions as f64 },
        valid_episodes: valid,
        tool_calls: calls,
        format_errors: errors,
        planner_emissions: emissions,
    })
}
