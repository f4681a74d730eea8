//! Fixture-driven stand-ins for the perception experts, the retriever and web search.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::fixtures::{FixtureSet, ImageFixture};
use crate::model::{Arguments, EvidenceKind};
use crate::retrieval::{retrieve, Embedder, KnowledgeStore, LabelSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockId {
    Classifier,
    Posture,
    Grounder,
    Segmenter,
    Retriever,
    WebSearch,
    Echo,
}

impl MockId {
    pub const ALL: [MockId; 7] = [
        MockId::Classifier,
        MockId::Posture,
        MockId::Grounder,
        MockId::Segmenter,
        MockId::Retriever,
        MockId::WebSearch,
        MockId::Echo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MockId::Classifier => "classifier",
            MockId::Posture => "posture",
            MockId::Grounder => "grounder",
            MockId::Segmenter => "segmenter",
            MockId::Retriever => "retriever",
            MockId::WebSearch => "web_search",
            MockId::Echo => "echo",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    /// The evidence kind this mock produces; `None` for echo, which fits any kind.
    pub fn kind(self) -> Option<EvidenceKind> {
        Some(match self {
            MockId::Classifier => EvidenceKind::Classification,
            MockId::Posture => EvidenceKind::Posture,
            MockId::Grounder => EvidenceKind::Grounding,
            MockId::Segmenter => EvidenceKind::Segmentation,
            MockId::Retriever => EvidenceKind::Retrieval,
            MockId::WebSearch => EvidenceKind::Web,
            MockId::Echo => return None,
        })
    }
}

/// Shared, read-only inputs of every builtin mock.
#[derive(Clone, Default)]
pub struct MockEnv {
    pub fixtures: Arc<FixtureSet>,
    pub knowledge: Option<Arc<KnowledgeStore>>,
    pub embedder: Option<Arc<dyn Embedder>>,
    pub labels: LabelSet,
}

impl std::fmt::Debug for MockEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockEnv")
            .field("images", &self.fixtures.images.len())
            .field("knowledge", &self.knowledge.as_ref().map(|k| k.total_entries()))
            .field("embedder", &self.embedder.as_ref().map(|e| e.fingerprint()))
            .finish()
    }
}

fn str_arg<'a>(args: &'a Arguments, name: &str) -> Result<&'a str, String> {
    args.get(name)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("argument {name:?} must be a string"))
}

fn image<'a>(env: &'a MockEnv, args: &Arguments) -> Result<(&'a ImageFixture, String), String> {
    let image = str_arg(args, "image")?;
    env.fixtures
        .images
        .get(image)
        .map(|fx| (fx, image.to_owned()))
        .ok_or_else(|| format!("no expert output available for image {image:?}"))
}

/// Run a builtin mock. `Err` carries the diagnostic of a tool_error.
pub fn run_mock(id: MockId, args: &Arguments, env: &MockEnv, top_k: usize) -> Result<Value, String> {
    match id {
        MockId::Classifier => {
            let (fx, name) = image(env, args)?;
            let findings = fx
                .classification
                .as_ref()
                .ok_or_else(|| format!("classifier has no output for image {name:?}"))?;
            Ok(json!({ "findings": findings }))
        }
        MockId::Posture => {
            let (fx, name) = image(env, args)?;
            let view = fx.posture.ok_or_else(|| format!("posture has no output for image {name:?}"))?;
            Ok(json!({ "view": view }))
        }
        MockId::Grounder => {
            let (fx, _) = image(env, args)?;
            let disease = str_arg(args, "disease")?;
            let boxes = fx.grounding.get(disease).cloned().unwrap_or_default();
            Ok(json!({ "disease": disease, "boxes": boxes }))
        }
        MockId::Segmenter => {
            let (fx, name) = image(env, args)?;
            let target = str_arg(args, "target")?;
            let seg = fx
                .segmentation
                .get(target)
                .ok_or_else(|| format!("segmenter has no mask for {target:?} on image {name:?}"))?;
            Ok(json!({ "target": target, "mask_ref": seg.mask_ref, "area_fraction": seg.area_fraction }))
        }
        MockId::Retriever => {
            let image = str_arg(args, "image")?;
            let labels = args
                .get("labels")
                .and_then(Value::as_array)
                .ok_or("argument \"labels\" must be an array")?
                .iter()
                .map(|v| v.as_str().ok_or("argument \"labels\" must hold strings"))
                .collect::<Result<Vec<_>, _>>()?;
            let (store, embedder) = match (&env.knowledge, &env.embedder) {
                (Some(s), Some(e)) => (s, e),
                _ => return Err("no knowledge store is loaded".into()),
            };
            let hits = retrieve(store, image, &labels, top_k, embedder.as_ref()).map_err(|e| e.to_string())?;
            let reports: Vec<Value> = hits
                .into_iter()
                .map(|h| {
                    json!({
                        "report_text": h.report_text,
                        "score": h.score,
                        "source_id": h.entry_id,
                        "pathology": h.pathology,
                    })
                })
                .collect();
            Ok(json!({ "reports": reports }))
        }
        MockId::WebSearch => {
            let query = str_arg(args, "query")?;
            let results = env.fixtures.web.get(query).cloned().unwrap_or_default();
            Ok(json!({ "results": results }))
        }
        MockId::Echo => Ok(json!({ "echo": args })),
    }
}
