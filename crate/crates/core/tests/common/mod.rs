#![allow(dead_code)]

pub mod oracles;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use evi_core::engine::{run_with_clock, RunOutcome};
use evi_core::gateway::{render_decision, Gateway, ParseError, PlannerDecision};
use evi_core::json::canonical_json;
use evi_core::memory::{EvidenceChain, EvidenceItem};
use evi_core::model::{Arguments, EvidenceKind, ExecutionPlan, Finding, Report, RunConfig, StudyInput, ToolCall, ToolResult, ToolStatus};
use evi_core::retrieval::{
    build_store, load_manifest, Embedder, EmbeddingVector, KnowledgeBase, KnowledgeEntry, KnowledgeStore, LabelSet,
    TestEmbedder, DEFAULT_ENTRIES_PER_BASE,
};
use evi_core::tools::{FixtureSet, MockEnv, Registry, ToolConfig};
use evi_core::trajectory::{Event, FixedClock, RunStatus, Stage, TrajectoryLog};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

pub fn golden_study() -> StudyInput {
    let text = std::fs::read_to_string(golden_dir().join("study.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn golden_store() -> KnowledgeStore {
    let labels = LabelSet::chexpert();
    let triplets = load_manifest(&golden_dir().join("kb/manifest.tsv"), &labels).unwrap();
    build_store(&triplets, &labels, &TestEmbedder::default(), DEFAULT_ENTRIES_PER_BASE).unwrap()
}

pub fn golden_env() -> MockEnv {
    let labels = LabelSet::chexpert();
    let fixtures = FixtureSet::load(&golden_dir().join("fixtures.json"), &labels).unwrap();
    MockEnv {
        fixtures: Arc::new(fixtures),
        knowledge: Some(Arc::new(golden_store())),
        embedder: Some(Arc::new(TestEmbedder::default())),
        labels,
    }
}

pub fn golden_registry(cfg: &RunConfig) -> Registry {
    Registry::from_config(&ToolConfig::default_tools(), &cfg.disabled_tool_kinds, golden_env())
}

pub fn golden_gateway() -> Gateway {
    use evi_core::gateway::{BackendConfig, ScriptedBackend};
    let path = golden_dir().join("script.txt");
    Gateway::new(Arc::new(ScriptedBackend::from_file(&path).unwrap()), BackendConfig::script(path))
}

pub fn golden_run() -> RunOutcome {
    let cfg = RunConfig::default();
    run_with_clock(&golden_study(), &golden_registry(&cfg), &golden_gateway(), &cfg, Arc::new(FixedClock(0))).unwrap()
}

// ---- fixture world for randomized runs ----

pub const IMAGES: [&str; 3] = ["cxr/r1.png", "cxr/r2.png", "cxr/r3.png"];
const VIEWS: [&str; 3] = ["AP", "PA", "LATERAL"];

/// Fixture set covering `IMAGES` with every expert output.
pub fn random_world_env() -> MockEnv {
    let labels = LabelSet::chexpert();
    let mut images = serde_json::Map::new();
    for (i, image) in IMAGES.iter().enumerate() {
        let p = 0.3 + 0.2 * i as f64;
        images.insert(
            image.to_string(),
            json!({
                "classification": [{"label": "Cardiomegaly", "prob": p}, {"label": "Edema", "prob": 1.0 - p}],
                "posture": VIEWS[i],
                "grounding": {"Cardiomegaly": [{"x0": 0.3, "y0": 0.4, "x1": 0.7, "y1": 0.8}]},
                "segmentation": {"heart": {"mask_ref": format!("m{i}.png"), "area_fraction": 0.2}}
            }),
        );
    }
    let text = json!({"images": images, "web": {"edema": [{"title": "t", "snippet": "s"}]}}).to_string();
    let fixtures = FixtureSet::parse(&text, &labels).unwrap();
    let embedder = TestEmbedder::default();
    let triplets: Vec<_> = ["Cardiomegaly", "Edema", "Atelectasis"]
        .iter()
        .enumerate()
        .flat_map(|(l, label)| {
            (0..3).map(move |j| evi_core::retrieval::Triplet {
                entry_id: format!("kb{l}{j}"),
                image_ref: format!("kb/{l}{j}.png"),
                report: format!("{label} reference report {j}."),
                label: label.to_string(),
            })
        })
        .collect();
    let store = build_store(&triplets, &labels, &embedder, 50).unwrap();
    MockEnv {
        fixtures: Arc::new(fixtures),
        knowledge: Some(Arc::new(store)),
        embedder: Some(Arc::new(embedder)),
        labels,
    }
}

pub fn block(body: Value) -> String {
    format!("```evi\n{}\n```", canonical_json(&body))
}

pub fn random_action(rng: &mut ChaCha8Rng) -> String {
    let image = *IMAGES.choose(rng).unwrap();
    let body = match rng.gen_range(0..9) {
        0 => json!({"action": "classifier", "args": {"image": image}}),
        1 => json!({"action": "posture", "args": {"image": image}}),
        2 => json!({"action": "grounder", "args": {"image": image, "disease": "Cardiomegaly"}}),
        3 => json!({"action": "segmenter", "args": {"image": image, "target": "heart"}}),
        4 => json!({"action": "retriever", "args": {"image": image, "labels": ["Cardiomegaly", "Edema"]}}),
        5 => json!({"action": "web_search", "args": {"query": "edema"}}),
        6 => json!({"action": "classifier", "args": {"image": "cxr/unknown.png"}}),
        7 => json!({"action": "grounder", "args": {"image": image}}),
        _ => json!({"action": "xray_magic", "args": {"image": image}}),
    };
    format!("step thought\n{}", block(body))
}

pub fn random_malformed(rng: &mut ChaCha8Rng) -> String {
    match rng.gen_range(0..6) {
        0 => "I think we should look at the lungs".to_owned(),
        1 => "```evi\n{\"action\": \"classifier\"}\n```".to_owned(),
        2 => "```evi\nnot json\n```".to_owned(),
        3 => format!("{}\n{}", block(json!({"final": "a"})), block(json!({"final": "b"}))),
        4 => block(json!({"plan": ["x"]})),
        _ => "```evi\n{\"final\": \"unterminated\"".to_owned(),
    }
}

/// A report citing `ids` chosen by the caller, or uncited when `ids` is empty.
pub fn report_line(ids: &[u64]) -> String {
    let cites: Vec<String> = ids.iter().map(|i| format!("E{i}")).collect();
    if cites.is_empty() {
        "FINDINGS:\n- Unsupported statement.\nIMPRESSION: none".to_owned()
    } else {
        format!("FINDINGS:\n- Supported statement [{}].\nIMPRESSION: done", cites.join(", "))
    }
}

/// Randomized scripted case. Mixes valid actions, malformed emissions and
/// a final answer; the report cites random ids from 1..=6.
pub fn random_script(rng: &mut ChaCha8Rng, with_plan: bool) -> Vec<String> {
    let mut lines = Vec::new();
    if with_plan {
        if rng.gen_bool(0.2) {
            lines.push(random_malformed(rng));
        }
        lines.push(block(json!({"plan": ["screen", "localize"]})));
    }
    let actions = rng.gen_range(0..8);
    for _ in 0..actions {
        if rng.gen_bool(0.15) {
            lines.push(random_malformed(rng));
        }
        lines.push(random_action(rng));
    }
    if rng.gen_bool(0.9) {
        lines.push(block(json!({"final": "done"})));
    }
    let n = rng.gen_range(0..3);
    let ids: Vec<u64> = (0..n).map(|_| rng.gen_range(1..=6)).collect();
    lines.push(report_line(&ids));
    lines
}

// ---- random stores ----

pub fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    loop {
        let values: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if values.iter().any(|v| *v != 0.0) {
            return EmbeddingVector::new(values).unwrap();
        }
    }
}

/// Random 14-base store with up to `max_per_base` entries per base. Entry ids
/// come from a small pool so the same id shows up in several bases, and some
/// vectors are repeated within a base to force score ties.
pub fn random_store(rng: &mut ChaCha8Rng, embedder: &TestEmbedder, max_per_base: usize) -> KnowledgeStore {
    random_store_with(rng, embedder, max_per_base, true)
}

/// As [`random_store`]; without `ties` every vector is drawn independently.
pub fn random_store_with(rng: &mut ChaCha8Rng, embedder: &TestEmbedder, max_per_base: usize, ties: bool) -> KnowledgeStore {
    let labels = LabelSet::chexpert();
    let dim = embedder.dimension();
    let mut bases = Vec::new();
    for label in labels.iter() {
        let n = rng.gen_range(0..=max_per_base);
        let mut ids: Vec<usize> = (0..(max_per_base * 2).max(1)).collect();
        ids.shuffle(rng);
        let mut entries: Vec<KnowledgeEntry> = Vec::with_capacity(n);
        for &id in ids.iter().take(n) {
            let vector = match entries.last() {
                Some(prev) if ties && rng.gen_bool(0.1) => prev.vector.clone(),
                _ if ties && rng.gen_bool(0.1) => embedder.embed(&format!("q{}", rng.gen_range(0..4)), label).unwrap(),
                _ => random_vector(rng, dim),
            };
            entries.push(KnowledgeEntry { entry_id: format!("s{id:03}"), vector, report_text: format!("report {id} {label}") });
        }
        bases.push(KnowledgeBase { pathology: label.to_owned(), entries });
    }
    KnowledgeStore::from_parts(labels, bases, dim, embedder.fingerprint()).unwrap()
}

// ---- random trajectory logs ----

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const PIECES: [&str; 8] = ["lung", " ", "\"quoted\"", "\n", "ü", "\\", "```evi", "{}"];
    (0..rng.gen_range(0..6)).map(|_| *PIECES.choose(rng).unwrap()).collect()
}

fn random_value(rng: &mut ChaCha8Rng, depth: u32) -> Value {
    match rng.gen_range(0..if depth == 0 { 4 } else { 6 }) {
        0 => Value::Null,
        1 => json!(rng.gen_bool(0.5)),
        2 => json!(rng.gen_range(-1000i64..1000)),
        3 => json!(rng.gen_range(-1.0e6..1.0e6)),
        4 => Value::Array((0..rng.gen_range(0..3)).map(|_| random_value(rng, depth - 1)).collect()),
        _ => Value::Object(random_args(rng, depth - 1)),
    }
}

fn random_args(rng: &mut ChaCha8Rng, depth: u32) -> Arguments {
    (0..rng.gen_range(0..3)).map(|i| (format!("k{}{}", i, random_text(rng)), random_value(rng, depth))).collect()
}

fn random_result(rng: &mut ChaCha8Rng, call_id: u64) -> ToolResult {
    let latency = rng.gen_range(0..500);
    if rng.gen_bool(0.6) {
        ToolResult::ok(call_id, Value::Object(random_args(rng, 2))).with_latency(latency)
    } else {
        let status = *[ToolStatus::ToolError, ToolStatus::ValidationError, ToolStatus::Timeout].choose(rng).unwrap();
        let mut r = ToolResult::failed(call_id, status, random_text(rng)).with_latency(latency);
        r.hallucinated_tool = status == ToolStatus::ValidationError && rng.gen_bool(0.5);
        r
    }
}

fn random_stage(rng: &mut ChaCha8Rng) -> Stage {
    *[Stage::Planning, Stage::Acting, Stage::Extraction, Stage::Reporting].choose(rng).unwrap()
}

fn random_decision(rng: &mut ChaCha8Rng) -> PlannerDecision {
    match rng.gen_range(0..4) {
        0 => PlannerDecision::Plan { plan: ExecutionPlan::from_steps([("a".to_string(), None), (random_text(rng) + "b", Some("grounder".to_string()))]).unwrap() },
        1 => PlannerDecision::Invoke { tool_name: "classifier".into(), arguments: random_args(rng, 2), thought: random_text(rng) },
        2 => PlannerDecision::Final { answer: random_text(rng) },
        _ => PlannerDecision::Malformed { raw: random_text(rng), error: ParseError::MultipleBlocks { count: 2 } },
    }
}

fn random_item(rng: &mut ChaCha8Rng, id: u64) -> EvidenceItem {
    EvidenceItem {
        evidence_id: id,
        kind: *EvidenceKind::ALL.choose(rng).unwrap(),
        payload: Value::Object(random_args(rng, 2)),
        source_call_id: rng.gen_range(1..20),
    }
}

/// Structurally arbitrary but well-formed log: dense seqs, one terminal event.
pub fn random_log(rng: &mut ChaCha8Rng) -> TrajectoryLog {
    let mut log = TrajectoryLog::new(format!("study-{}{}", rng.gen_range(0..100), random_text(rng)));
    let n = rng.gen_range(0..25);
    for i in 0..n {
        let ts = rng.gen_range(0..1_000_000);
        let event = match rng.gen_range(0..9) {
            0 => Event::PlanEmitted { plan: ExecutionPlan::from_steps([("look", None)]).unwrap() },
            1 => Event::PlannerRawEmission { stage: random_stage(rng), round: rng.gen_range(0..11), text: random_text(rng) },
            2 => Event::DecisionParsed { round: rng.gen_range(1..11), decision: random_decision(rng) },
            3 => Event::ParseFailure {
                stage: random_stage(rng),
                round: rng.gen_range(0..11),
                attempt: rng.gen_range(1..4),
                error: ParseError::MissingField { field: "args".into() },
            },
            4 => Event::ToolDispatched {
                call: ToolCall { call_id: i + 1, round: rng.gen_range(1..11), tool_name: random_text(rng), arguments: random_args(rng, 2) },
            },
            5 => Event::ToolReturned { result: random_result(rng, i + 1) },
            6 => Event::EvidenceAppended { item: random_item(rng, i + 1) },
            7 => {
                let mut chain = EvidenceChain::empty();
                for id in 1..rng.gen_range(1..4) {
                    let item = random_item(rng, id);
                    chain.provenance.insert(item.evidence_id, item.source_call_id);
                    chain.entries.push(item);
                }
                chain.grouped = rng.gen_bool(0.5);
                if rng.gen_bool(0.3) {
                    chain.summary = Some(random_text(rng));
                }
                Event::ChainExtracted { chain }
            }
            _ => Event::PlannerRawEmission { stage: Stage::Reporting, round: 0, text: random_text(rng) },
        };
        log.push(event, ts);
    }
    let terminal = if rng.gen_bool(0.5) {
        Event::ReportEmitted {
            report: Report {
                findings: vec![Finding { text: random_text(rng), evidence_ids: vec![1, 2] }],
                impression: random_text(rng),
                raw_text: random_text(rng),
            },
        }
    } else {
        let status = *[RunStatus::Failed, RunStatus::InvalidExhausted].choose(rng).unwrap();
        Event::Aborted { status, stage: random_stage(rng), reason: random_text(rng) }
    };
    log.push(terminal, rng.gen_range(0..1_000_000));
    log
}

/// Canonical emission of a random decision, for grammar round trips.
pub fn render(decision: &PlannerDecision) -> String {
    render_decision(decision)
}
