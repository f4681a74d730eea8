//! `evi`: run, batch, ablate, build and inspect from the command line.

mod inspect;
mod setup;

use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Result;
use clap::{ArgGroup, Args, Parser, Subcommand};

use evi_core::engine::{run_with_clock, RunOutcome};
use evi_core::gateway::{BackendConfig, Gateway, GatewayError};
use evi_core::harness::{
    case_dir_name, compute_metrics, diff_logs, read_log, render_table, run_ablation, run_batch, summarize, table_json,
    write_outcome, AblationSpec, AblationVariant, BatchSpec, DiffError, TrajectoryDiff, TRAJECTORY_FILE,
};
use evi_core::model::{RunConfig, StudyInput};
use evi_core::retrieval::{build_store, load_manifest, LabelSet};
use evi_core::tools::{Registry, ToolConfig};
use evi_core::trajectory::{Clock, FixedClock, RunStatus, SystemClock, TrajectoryLog};

use setup::{exit, require_file, BackendFlags, Coded, EmbedderFlags, EngineFlags, Exit, ToolFlags, EX_DATAERR, EX_NOINPUT, EX_USAGE};

#[derive(Debug, Parser)]
#[command(name = "evi", version, about = "Evidence-driven chest X-ray report agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one study through plan, act and report
    Run(RunArgs),
    /// Run every case of a cases file
    Batch(BatchArgs),
    /// Compare ablation variants over the same cases
    Ablate(AblateArgs),
    /// Build a knowledge store from a triplet manifest
    BuildKb(BuildKbArgs),
    /// Render a trajectory file
    Inspect(InspectArgs),
    /// Check a tool config and print the planner's tool menu
    ToolsValidate(ToolsValidateArgs),
    /// Score trajectory files
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").required(true).args(["study", "image"])))]
struct RunArgs {
    /// Study file with study_id, images and instruction
    #[arg(long, conflicts_with_all = ["image", "instruction", "study_id"])]
    study: Option<PathBuf>,
    /// Image reference; repeat for multi-view studies
    #[arg(long)]
    image: Vec<String>,
    #[arg(long, default_value = "Generate the findings and impression of a radiology report for this chest X-ray study.")]
    instruction: String,
    #[arg(long = "study-id", default_value = "study")]
    study_id: String,
    #[command(flatten)]
    tools: ToolFlags,
    #[command(flatten)]
    backend: BackendFlags,
    #[command(flatten)]
    engine: EngineFlags,
    /// Directory for the trajectory, chain and report files
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record wall-clock timestamps and tool latencies
    #[arg(long = "wall-clock")]
    wall_clock: bool,
}

#[derive(Debug, Args)]
struct BatchArgs {
    /// One study object per line
    #[arg(long)]
    cases: PathBuf,
    #[command(flatten)]
    tools: ToolFlags,
    #[command(flatten)]
    backend: BackendFlags,
    #[command(flatten)]
    engine: EngineFlags,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "wall-clock")]
    wall_clock: bool,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    cases: PathBuf,
    /// Comma-separated variants; all six when omitted
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    #[command(flatten)]
    tools: ToolFlags,
    #[command(flatten)]
    backend: BackendFlags,
    #[command(flatten)]
    engine: EngineFlags,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    /// Directory for ablation.txt and ablation.json
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BuildKbArgs {
    /// Tab-separated image_ref, label, report path
    manifest: PathBuf,
    #[command(flatten)]
    embedder: EmbedderFlags,
    /// Entries kept per pathology
    #[arg(long, default_value_t = evi_core::retrieval::DEFAULT_ENTRIES_PER_BASE)]
    m: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("view").args(["evidence", "report", "full"])))]
struct InspectArgs {
    trajectory: PathBuf,
    /// Findings with their cited evidence and originating calls
    #[arg(long)]
    evidence: bool,
    #[arg(long)]
    report: bool,
    /// Every event (the default view)
    #[arg(long)]
    full: bool,
    /// Compare against a golden trajectory instead of rendering
    #[arg(long)]
    golden: Option<PathBuf>,
    /// Reference report text; findings get [+]/[-]/[?] marks
    #[arg(long = "ground-truth")]
    ground_truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ToolsValidateArgs {
    config: PathBuf,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// Trajectory files or directories searched for them
    #[arg(required = true)]
    paths: Vec<PathBuf>,
    #[arg(long)]
    json: bool,
}

fn status_code(status: RunStatus) -> i32 {
    match status {
        RunStatus::Valid => 0,
        RunStatus::InvalidExhausted => 2,
        RunStatus::Failed => 3,
    }
}

fn clock(wall: bool) -> Arc<dyn Clock> {
    if wall {
        Arc::new(SystemClock::new())
    } else {
        Arc::new(FixedClock(0))
    }
}

fn print_outcome(outcome: &RunOutcome) {
    println!("status: {}", outcome.status.as_str());
    println!(
        "rounds: {}  tool calls: {}  format errors: {}",
        outcome.stats.rounds_used, outcome.stats.tool_calls, outcome.stats.format_errors
    );
    if let Some(report) = &outcome.report {
        println!();
        println!("{}", report.raw_text.trim_end());
    }
}

fn cmd_run(args: RunArgs) -> Result<i32> {
    let cfg = args.engine.config()?;
    let study = match &args.study {
        Some(path) => setup::read_study(path)?,
        None => StudyInput::new(args.study_id.clone(), args.image.clone(), args.instruction.clone()).code(EX_USAGE)?,
    };
    let registry = args.tools.registry(&cfg)?;
    let gateway = args.backend.gateway()?;
    let outcome = run_with_clock(&study, &registry, &gateway, &cfg, clock(args.wall_clock)).code(EX_DATAERR)?;
    if let Some(out) = &args.out {
        write_outcome(out, &outcome, !args.wall_clock).code(EX_DATAERR)?;
    }
    print_outcome(&outcome);
    Ok(status_code(outcome.status))
}

/// Gateway source for multi-case commands: per-case script files under a
/// directory, or one shared endpoint.
enum Source {
    Scripts(PathBuf),
    Endpoint(BackendConfig),
}

impl Source {
    fn new(flags: &BackendFlags) -> Result<Self> {
        match &flags.script {
            Some(dir) if dir.is_dir() => Ok(Source::Scripts(dir.clone())),
            Some(dir) => Err(exit(EX_DATAERR, format!("{}: batch scripts must be a directory", dir.display()))),
            None => Ok(Source::Endpoint(flags.endpoint()?)),
        }
    }

    /// `<case>.<variant>.txt` wins over `<case>.txt`.
    fn gateway(&self, study: &StudyInput, variant: Option<&str>) -> Result<Gateway, GatewayError> {
        match self {
            Source::Endpoint(cfg) => Gateway::from_config(cfg.clone()),
            Source::Scripts(dir) => {
                let name = case_dir_name(&study.study_id);
                let specific = variant.map(|v| dir.join(format!("{name}.{v}.txt")));
                let path = specific.filter(|p| p.exists()).unwrap_or_else(|| dir.join(format!("{name}.txt")));
                Gateway::from_config(BackendConfig::script(path))
            }
        }
    }
}

fn cmd_batch(args: BatchArgs) -> Result<i32> {
    let cfg = args.engine.config()?;
    let cases = setup::read_cases(&args.cases)?;
    let registry = args.tools.registry(&cfg)?;
    let source = Source::new(&args.backend)?;
    let mut spec = BatchSpec::new(cases, cfg);
    spec.parallelism = args.parallelism;
    spec.output_dir = Some(args.out.clone());
    spec.wall_clock = args.wall_clock;
    let factory = |s: &StudyInput, _: &RunConfig| source.gateway(s, None);
    let report = run_batch(&spec, &registry, &factory).code(EX_DATAERR)?;
    let mut metrics = serde_json::to_string_pretty(&report.metrics)?;
    metrics.push('\n');
    std::fs::write(args.out.join("metrics.json"), metrics).code(EX_DATAERR)?;
    for (case, outcome) in spec.cases.iter().zip(&report.outcomes) {
        println!("{}\t{}", case.study_id, outcome.status.as_str());
    }
    println!();
    print!("{}", render_table(&[("batch".to_owned(), report.metrics)]));
    Ok(0)
}

fn cmd_ablate(args: AblateArgs) -> Result<i32> {
    let base_cfg = args.engine.config()?;
    let variants = if args.variants.is_empty() {
        AblationVariant::ALL.to_vec()
    } else {
        args.variants.iter().map(|v| v.parse()).collect::<Result<Vec<AblationVariant>, _>>().code(EX_USAGE)?
    };
    let cases = setup::read_cases(&args.cases)?;
    let tools: ToolConfig = args.tools.config()?;
    let source = Source::new(&args.backend)?;
    let spec = AblationSpec { base_cfg, variants, cases, tools: &tools, env: args.tools.env()?, parallelism: args.parallelism };
    let factory = |s: &StudyInput, cfg: &RunConfig| {
        let variant = AblationVariant::ALL.into_iter().find(|v| v.apply(&spec.base_cfg) == *cfg);
        source.gateway(s, variant.map(AblationVariant::as_str))
    };
    let results = run_ablation(&spec, &factory).code(EX_DATAERR)?;
    let rows = summarize(&results);
    let table = render_table(&rows);
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).code(EX_DATAERR)?;
        std::fs::write(out.join("ablation.txt"), &table).code(EX_DATAERR)?;
        let mut json = serde_json::to_string_pretty(&table_json(&rows))?;
        json.push('\n');
        std::fs::write(out.join("ablation.json"), json).code(EX_DATAERR)?;
    }
    print!("{table}");
    Ok(0)
}

fn cmd_build_kb(args: BuildKbArgs) -> Result<i32> {
    if args.m == 0 {
        return Err(exit(EX_USAGE, "--m must be positive"));
    }
    require_file(&args.manifest, EX_NOINPUT)?;
    let labels = LabelSet::chexpert();
    let triplets = load_manifest(&args.manifest, &labels).map_err(|e| exit(EX_DATAERR, format!("{}: {e}", args.manifest.display())))?;
    let embedder = args.embedder.build()?;
    let store = build_store(&triplets, &labels, embedder.as_ref(), args.m).code(EX_DATAERR)?;
    store.persist(&args.out).code(EX_DATAERR)?;
    for base in store.bases() {
        println!("{}\t{}", base.pathology, base.entries.len());
    }
    println!("total\t{}", store.total_entries());
    Ok(0)
}

fn load_log(path: &Path) -> Result<TrajectoryLog> {
    read_log(path).map_err(|e| match e {
        DiffError::Io { .. } => exit(EX_NOINPUT, e.to_string()),
        DiffError::Corrupt { .. } => exit(EX_DATAERR, e.to_string()),
    })
}

fn cmd_inspect(args: InspectArgs) -> Result<i32> {
    let log = load_log(&args.trajectory)?;
    if let Some(golden) = &args.golden {
        let golden = load_log(golden)?;
        return Ok(match diff_logs(&log, &golden) {
            TrajectoryDiff::Equal => {
                println!("identical to golden ({} events)", log.len());
                0
            }
            TrajectoryDiff::StudyMismatch { left, right } => {
                println!("study differs: {left:?} vs golden {right:?}");
                1
            }
            TrajectoryDiff::Divergence { seq, left, right } => {
                println!("first difference at seq {seq}");
                let line = |e: Option<evi_core::trajectory::LoggedEvent>| e.map_or("(end of log)".to_owned(), |e| inspect::render_event(&e));
                println!("  this:   {}", line(left));
                println!("  golden: {}", line(right));
                1
            }
        });
    }
    let truth = match &args.ground_truth {
        Some(path) => Some(std::fs::read_to_string(path).map_err(|e| exit(EX_NOINPUT, format!("{}: {e}", path.display())))?),
        None => None,
    };
    let view = inspect::View { ground_truth: truth.as_deref(), labels: LabelSet::chexpert(), colour: std::io::stdout().is_terminal() };
    let text = if args.evidence {
        inspect::render_evidence(&log, &view)
    } else if args.report {
        inspect::render_report(&log, &view)
    } else {
        inspect::render_full(&log)
    };
    print!("{text}");
    Ok(0)
}

fn cmd_tools_validate(args: ToolsValidateArgs) -> Result<i32> {
    let config = ToolConfig::load(&args.config).code(EX_DATAERR)?;
    let registry = Registry::from_config(&config, &Default::default(), Default::default());
    println!("{}: {} tools", args.config.display(), registry.len());
    println!();
    print!("{}", registry.tools_prompt());
    Ok(0)
}

fn collect_logs(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path).code(EX_NOINPUT)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>().code(EX_NOINPUT)?;
        entries.sort();
        for entry in entries {
            if entry.is_dir() || entry.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".traj.jsonl")) {
                collect_logs(&entry, out)?;
            }
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

fn cmd_metrics(args: MetricsArgs) -> Result<i32> {
    let mut files = Vec::new();
    for path in &args.paths {
        require_file(path, EX_NOINPUT)?;
        collect_logs(path, &mut files)?;
    }
    if files.is_empty() {
        return Err(exit(EX_NOINPUT, format!("no {TRAJECTORY_FILE} files found")));
    }
    let logs = files.iter().map(|f| load_log(f)).collect::<Result<Vec<_>>>()?;
    let metrics = compute_metrics(&logs).code(EX_DATAERR)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&metrics)?);
    } else {
        print!("{}", render_table(&[("all".to_owned(), metrics)]));
    }
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Batch(a) => cmd_batch(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::BuildKb(a) => cmd_build_kb(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::ToolsValidate(a) => cmd_tools_validate(a),
        Command::Metrics(a) => cmd_metrics(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EX_USAGE as u8 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("evi: {err:#}");
            let code = err.downcast_ref::<Exit>().map_or(1, |e| e.code);
            ExitCode::from(code as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn flag_definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn status_codes() {
        assert_eq!(status_code(RunStatus::Valid), 0);
        assert_eq!(status_code(RunStatus::InvalidExhausted), 2);
        assert_eq!(status_code(RunStatus::Failed), 3);
    }

    #[test]
    fn bad_flags_are_usage_errors() {
        let err = Cli::try_parse_from(["evi", "run", "--bogus"]).unwrap_err();
        assert!(err.use_stderr());
        let err = Cli::try_parse_from(["evi", "inspect", "t.jsonl", "--evidence", "--full"]).unwrap_err();
        assert!(err.use_stderr());
        assert!(Cli::try_parse_from(["evi", "run", "--image", "a.png", "--no-strict", "--strict"]).is_ok());
    }
}
