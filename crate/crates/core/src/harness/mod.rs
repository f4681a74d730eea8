//! Batch runs, agent metrics, ablations and golden-trajectory comparison.

mod ablation;
mod batch;
mod diff;
mod metrics;

pub use ablation::{render_table, run_ablation, summarize, table_json, AblationError, AblationSpec, AblationVariant, VariantResult};
pub use batch::{
    case_dir_name, run_batch, run_case, write_outcome, BatchError, BatchReport, BatchSpec, GatewayFactory, QualityJudge,
    CHAIN_FILE, REPORT_FILE, TRAJECTORY_FILE,
};
pub use diff::{diff_logs, diff_trajectory, read_log, DiffError, TrajectoryDiff};
pub use metrics::{compute_metrics, AgentMetrics, MetricsError};
