//! Trajectory comparison against golden files, timing fields ignored.

use std::path::Path;

use thiserror::Error;

use crate::trajectory::{LoggedEvent, TrajectoryError, TrajectoryLog};

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Corrupt { path: String, source: TrajectoryError },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryDiff {
    Equal,
    StudyMismatch { left: String, right: String },
    /// First sequence number whose events differ; `None` marks a log that ended earlier.
    Divergence { seq: u64, left: Option<LoggedEvent>, right: Option<LoggedEvent> },
}

pub fn diff_logs(left: &TrajectoryLog, right: &TrajectoryLog) -> TrajectoryDiff {
    let (left, right) = (left.canonical(), right.canonical());
    if left.study_id != right.study_id {
        return TrajectoryDiff::StudyMismatch { left: left.study_id, right: right.study_id };
    }
    let len = left.events().len().max(right.events().len());
    for i in 0..len {
        let (l, r) = (left.events().get(i), right.events().get(i));
        if l != r {
            return TrajectoryDiff::Divergence { seq: i as u64 + 1, left: l.cloned(), right: r.cloned() };
        }
    }
    TrajectoryDiff::Equal
}

pub fn read_log(path: &Path) -> Result<TrajectoryLog, DiffError> {
    let bytes = std::fs::read(path).map_err(|source| DiffError::Io { path: path.display().to_string(), source })?;
    TrajectoryLog::deserialize(&bytes).map_err(|source| DiffError::Corrupt { path: path.display().to_string(), source })
}

pub fn diff_trajectory(log_path: &Path, golden_path: &Path) -> Result<TrajectoryDiff, DiffError> {
    Ok(diff_logs(&read_log(log_path)?, &read_log(golden_path)?))
}
