//! Batch execution over a worker pool with case-ordered results.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::metrics::{compute_metrics, AgentMetrics, MetricsError};
use crate::engine::{run_with_clock, RunOutcome, RunStats};
use crate::gateway::{Gateway, GatewayError};
use crate::memory::EvidenceMemory;
use crate::model::{Report, RunConfig, StudyInput};
use crate::tools::Registry;
use crate::trajectory::{Clock, Event, FixedClock, Recorder, RunStatus, Stage, SystemClock};

pub const TRAJECTORY_FILE: &str = "trajectory.traj.jsonl";
pub const CHAIN_FILE: &str = "chain.json";
pub const REPORT_FILE: &str = "report.json";

/// Builds the gateway of one case. Scripted batches hand every case its own script.
pub type GatewayFactory<'a> = dyn Fn(&StudyInput, &RunConfig) -> Result<Gateway, GatewayError> + Sync + 'a;

/// Optional external report scorer. No judge is configured by default.
pub trait QualityJudge: Send + Sync {
    fn score(&self, study: &StudyInput, report: &Report) -> Option<f64>;
}

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("parallelism must be at least 1")]
    ZeroParallelism,
    #[error("batch has no cases")]
    NoCases,
    #[error("studies {first:?} and {second:?} map to the same output directory")]
    DuplicateStudy { first: String, second: String },
    #[error("cannot start worker pool: {0}")]
    Pool(String),
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: io::Error },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub struct BatchSpec {
    pub cases: Vec<StudyInput>,
    pub cfg: RunConfig,
    pub parallelism: usize,
    pub output_dir: Option<PathBuf>,
    /// Stamp events with elapsed wall time instead of 0, and keep tool latencies in written files.
    pub wall_clock: bool,
    pub judge: Option<Arc<dyn QualityJudge>>,
}

impl BatchSpec {
    pub fn new(cases: Vec<StudyInput>, cfg: RunConfig) -> Self {
        Self {
            cases,
            cfg,
            parallelism: 1,
            output_dir: None,
            wall_clock: false,
            judge: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub outcomes: Vec<RunOutcome>,
    pub metrics: AgentMetrics,
    /// One entry per case when a judge is configured, otherwise empty.
    pub quality: Vec<Option<f64>>,
}

/// Directory name for a study: characters outside `[A-Za-z0-9._-]` become `_`.
pub fn case_dir_name(study_id: &str) -> String {
    let name: String = study_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect();
    if name.chars().all(|c| c == '.') {
        format!("_{name}")
    } else {
        name
    }
}

/// Outcome of a case the engine could not start.
fn setup_failure(study: &StudyInput, reason: String) -> RunOutcome {
    let mut recorder = Recorder::new(study.study_id.clone(), Arc::new(FixedClock(0)));
    recorder.record(Event::Aborted { status: RunStatus::Failed, stage: Stage::Planning, reason });
    RunOutcome {
        status: RunStatus::Failed,
        report: None,
        chain: None,
        memory: EvidenceMemory::new(),
        log: recorder.into_log(),
        stats: RunStats::default(),
    }
}

pub fn run_case(study: &StudyInput, registry: &Registry, factory: &GatewayFactory<'_>, cfg: &RunConfig, clock: Arc<dyn Clock>) -> RunOutcome {
    let gateway = match factory(study, cfg) {
        Ok(g) => g,
        Err(e) => return setup_failure(study, format!("backend setup failed: {e}")),
    };
    run_with_clock(study, registry, &gateway, cfg, clock).unwrap_or_else(|e| setup_failure(study, e.to_string()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), BatchError> {
    std::fs::write(path, bytes).map_err(|source| BatchError::Write { path: path.display().to_string(), source })
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("outcome values serialize");
    bytes.push(b'\n');
    bytes
}

/// Write the trajectory, chain and report files of one outcome into `dir`.
pub fn write_outcome(dir: &Path, outcome: &RunOutcome, canonical: bool) -> Result<(), BatchError> {
    std::fs::create_dir_all(dir).map_err(|source| BatchError::Write { path: dir.display().to_string(), source })?;
    let log = if canonical { outcome.log.canonical() } else { outcome.log.clone() };
    let bytes = log.serialize().expect("engine logs always end with a terminal event");
    write(&dir.join(TRAJECTORY_FILE), &bytes)?;
    write(&dir.join(CHAIN_FILE), &pretty(&outcome.chain))?;
    write(&dir.join(REPORT_FILE), &pretty(&outcome.report))?;
    Ok(())
}

/// Run every case and score the batch. Case failures become failed outcomes;
/// only setup problems and write errors abort.
pub fn run_batch(spec: &BatchSpec, registry: &Registry, factory: &GatewayFactory<'_>) -> Result<BatchReport, BatchError> {
    if spec.parallelism == 0 {
        return Err(BatchError::ZeroParallelism);
    }
    if spec.cases.is_empty() {
        return Err(BatchError::NoCases);
    }
    let mut dirs: BTreeMap<String, &str> = BTreeMap::new();
    for case in &spec.cases {
        if let Some(first) = dirs.insert(case_dir_name(&case.study_id), &case.study_id) {
            return Err(BatchError::DuplicateStudy { first: first.to_owned(), second: case.study_id.clone() });
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.parallelism)
        .build()
        .map_err(|e| BatchError::Pool(e.to_string()))?;
    let outcomes: Vec<RunOutcome> = pool.install(|| {
        spec.cases
            .par_iter()
            .map(|case| {
                let clock: Arc<dyn Clock> = if spec.wall_clock { Arc::new(SystemClock::new()) } else { Arc::new(FixedClock(0)) };
                run_case(case, registry, factory, &spec.cfg, clock)
            })
            .collect()
    });
    if let Some(out) = &spec.output_dir {
        for (case, outcome) in spec.cases.iter().zip(&outcomes) {
            write_outcome(&out.join(case_dir_name(&case.study_id)), outcome, !spec.wall_clock)?;
        }
    }
    let logs: Vec<_> = outcomes.iter().map(|o| o.log.clone()).collect();
    let metrics = compute_metrics(&logs)?;
    let quality = match &spec.judge {
        None => Vec::new(),
        Some(judge) => spec
            .cases
            .iter()
            .zip(&outcomes)
            .map(|(case, o)| o.report.as_ref().and_then(|r| judge.score(case, r)))
            .collect(),
    };
    Ok(BatchReport { outcomes, metrics, quality })
}
