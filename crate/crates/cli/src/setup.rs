//! Flag groups shared by `run`, `batch` and `ablate`, and the objects built from them.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Result;
use clap::Args;

use evi_core::gateway::{BackendConfig, Gateway};
use evi_core::model::{EvidenceKind, RunConfig, StudyInput};
use evi_core::retrieval::{Embedder, HttpEmbedder, KnowledgeStore, LabelSet, TestEmbedder, DEFAULT_SEED, DEFAULT_TEST_DIMENSION};
use evi_core::tools::{FixtureSet, MockEnv, Registry, ToolConfig};

pub const EX_USAGE: i32 = 64;
pub const EX_DATAERR: i32 = 65;
pub const EX_NOINPUT: i32 = 66;

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct Exit {
    pub code: i32,
    pub message: String,
}

impl Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Exit {}

pub fn exit(code: i32, message: impl Into<String>) -> anyhow::Error {
    Exit { code, message: message.into() }.into()
}

pub trait Coded<T> {
    fn code(self, code: i32) -> Result<T>;
}

impl<T, E: Display> Coded<T> for std::result::Result<T, E> {
    fn code(self, code: i32) -> Result<T> {
        self.map_err(|e| exit(code, e.to_string()))
    }
}

#[derive(Debug, Args)]
pub struct ToolFlags {
    /// Tool config file; the built-in toolbox when omitted
    #[arg(long)]
    pub tools: Option<PathBuf>,
    /// Expert outputs served by the built-in mock tools
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    /// Knowledge store built by `build-kb`
    #[arg(long)]
    pub kb: Option<PathBuf>,
    #[command(flatten)]
    pub embedder: EmbedderFlags,
}

#[derive(Debug, Args)]
pub struct EmbedderFlags {
    /// `test` for the seeded hash embedder, or an embedding endpoint URL
    #[arg(long, default_value = "test")]
    pub embedder: String,
    #[arg(long, default_value_t = DEFAULT_TEST_DIMENSION)]
    pub dim: usize,
    /// Seed of the test embedder
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Model name sent to an embedding endpoint
    #[arg(long, default_value = "default")]
    pub embedder_model: String,
}

impl EmbedderFlags {
    pub fn build(&self) -> Result<Arc<dyn Embedder>> {
        if self.dim == 0 {
            return Err(exit(EX_USAGE, "--dim must be positive"));
        }
        if self.embedder == "test" {
            return Ok(Arc::new(TestEmbedder::new(self.dim, self.seed)));
        }
        if self.embedder.starts_with("http://") || self.embedder.starts_with("https://") {
            let e = HttpEmbedder::new(self.embedder.clone(), self.embedder_model.clone(), self.dim, 30_000).code(EX_DATAERR)?;
            return Ok(Arc::new(e));
        }
        Err(exit(EX_USAGE, format!("--embedder must be `test` or a URL, got {:?}", self.embedder)))
    }
}

#[derive(Debug, Args)]
pub struct BackendFlags {
    /// Chat-completion endpoint; defaults to $EVI_BACKEND_URL
    #[arg(long, conflicts_with = "script")]
    pub backend: Option<String>,
    /// Scripted emissions, one per line (a directory of per-case scripts for batches)
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Model name; defaults to $EVI_MODEL
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long = "backend-timeout-ms", default_value_t = 120_000)]
    pub timeout_ms: u64,
}

impl BackendFlags {
    pub fn endpoint(&self) -> Result<BackendConfig> {
        let mut cfg = match (&self.backend, BackendConfig::from_env()) {
            (Some(url), _) => BackendConfig::endpoint(url.clone()),
            (None, Some(cfg)) => cfg,
            (None, None) => return Err(exit(EX_USAGE, "no backend: pass --script, --backend or set EVI_BACKEND_URL")),
        };
        if let Some(model) = &self.model {
            cfg.model = model.clone();
        }
        cfg.timeout_ms = self.timeout_ms;
        Ok(cfg)
    }

    /// Gateway over a single script file or endpoint.
    pub fn gateway(&self) -> Result<Gateway> {
        let cfg = match &self.script {
            Some(path) => {
                require_file(path, EX_DATAERR)?;
                BackendConfig::script(path.clone())
            }
            None => self.endpoint()?,
        };
        Gateway::from_config(cfg).code(EX_DATAERR)
    }
}

#[derive(Debug, Args)]
pub struct EngineFlags {
    #[arg(long = "t-max", default_value_t = 10)]
    pub t_max: u32,
    #[arg(long = "top-k", default_value_t = 4)]
    pub top_k: usize,
    /// Malformed emissions tolerated per round
    #[arg(long, default_value_t = 2)]
    pub retries: u32,
    /// Reject reports with uncited findings (default)
    #[arg(long, overrides_with = "no_strict")]
    pub strict: bool,
    #[arg(long = "no-strict", overrides_with = "strict")]
    pub no_strict: bool,
    #[arg(long = "no-planning")]
    pub no_planning: bool,
    #[arg(long = "no-extraction")]
    pub no_extraction: bool,
    /// Evidence kind whose tools are withheld; repeatable
    #[arg(long = "disable", value_name = "KIND")]
    pub disable: Vec<String>,
    /// Fill retrieval labels from classifier evidence
    #[arg(long = "auto-route")]
    pub auto_route: bool,
    /// Ask the backend for a summary of the evidence chain
    #[arg(long)]
    pub summarize: bool,
}

impl EngineFlags {
    pub fn config(&self) -> Result<RunConfig> {
        let mut disabled = BTreeSet::new();
        for kind in &self.disable {
            let kind: EvidenceKind = kind.parse().map_err(|_| exit(EX_USAGE, format!("--disable: unknown evidence kind {kind:?}")))?;
            disabled.insert(kind);
        }
        let cfg = RunConfig {
            t_max: self.t_max,
            top_k: self.top_k,
            max_parse_retries_per_round: self.retries,
            strict_evidence: !self.no_strict,
            disabled_tool_kinds: disabled,
            skip_planning: self.no_planning,
            skip_extraction: self.no_extraction,
            summarize_evidence: self.summarize,
            auto_route_labels: self.auto_route,
        };
        cfg.validate().code(EX_USAGE)?;
        Ok(cfg)
    }
}

pub fn require_file(path: &Path, code: i32) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(exit(code, format!("{}: no such file", path.display())))
    }
}

impl ToolFlags {
    pub fn env(&self) -> Result<MockEnv> {
        let store = match &self.kb {
            Some(path) => {
                require_file(path, EX_DATAERR)?;
                Some(KnowledgeStore::load(path).map_err(|e| exit(EX_DATAERR, format!("{}: {e}", path.display())))?)
            }
            None => None,
        };
        let labels = store.as_ref().map_or_else(LabelSet::chexpert, |s| s.labels().clone());
        let fixtures = match &self.fixtures {
            Some(path) => FixtureSet::load(path, &labels).code(EX_DATAERR)?,
            None => FixtureSet::default(),
        };
        Ok(MockEnv {
            fixtures: Arc::new(fixtures),
            knowledge: store.map(Arc::new),
            embedder: Some(self.embedder.build()?),
            labels,
        })
    }

    pub fn config(&self) -> Result<ToolConfig> {
        match &self.tools {
            Some(path) => ToolConfig::load(path).code(EX_DATAERR),
            None => Ok(ToolConfig::default_tools()),
        }
    }

    pub fn registry(&self, cfg: &RunConfig) -> Result<Registry> {
        Ok(Registry::from_config(&self.config()?, &cfg.disabled_tool_kinds, self.env()?))
    }
}

pub fn read_study(path: &Path) -> Result<StudyInput> {
    require_file(path, EX_DATAERR)?;
    let text = std::fs::read_to_string(path).code(EX_DATAERR)?;
    let study: StudyInput = serde_json::from_str(&text).map_err(|e| exit(EX_DATAERR, format!("{}: {e}", path.display())))?;
    study.validate().map_err(|e| exit(EX_DATAERR, format!("{}: {e}", path.display())))?;
    Ok(study)
}

/// Cases file: one study object per line, blank lines and `#` comments skipped.
pub fn read_cases(path: &Path) -> Result<Vec<StudyInput>> {
    require_file(path, EX_DATAERR)?;
    let text = std::fs::read_to_string(path).code(EX_DATAERR)?;
    let mut cases = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |e: String| exit(EX_DATAERR, format!("{} line {}: {e}", path.display(), i + 1));
        let study: StudyInput = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        study.validate().map_err(|e| bad(e.to_string()))?;
        cases.push(study);
    }
    if cases.is_empty() {
        return Err(exit(EX_DATAERR, format!("{}: no cases", path.display())));
    }
    Ok(cases)
}
