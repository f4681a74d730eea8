//! Independent reference implementations the library is checked against.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde_json::Value;

use evi_core::model::Arguments;
use evi_core::retrieval::{Embedder, KnowledgeStore};
use evi_core::tools::{ArgSchema, ArgType, Violation};

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub entry_id: String,
    pub pathology: String,
    pub report_text: String,
    pub score: f64,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    let s = dot / (aa.sqrt() * bb.sqrt());
    s.max(-1.0).min(1.0)
}

fn desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).expect("finite scores")
}

/// Score every entry of every queried base, keep each base's top `k`, merge by
/// entry id and sort.
pub fn brute_force(store: &KnowledgeStore, image: &str, query: &[String], k: usize, embedder: &dyn Embedder) -> Vec<Hit> {
    // (label index, hit)
    let mut candidates: Vec<(usize, Hit)> = Vec::new();
    for (label_index, base) in store.bases().iter().enumerate() {
        if !query.iter().any(|q| q == &base.pathology) {
            continue;
        }
        let q = embedder.embed(image, &base.pathology).unwrap();
        let mut scored: Vec<(usize, f64)> = base
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i, cosine(q.values(), e.vector.values())))
            .collect();
        scored.sort_by(|x, y| desc(x.1, y.1).then(x.0.cmp(&y.0)));
        for &(i, score) in scored.iter().take(k) {
            let e = &base.entries[i];
            candidates.push((
                label_index,
                Hit { entry_id: e.entry_id.clone(), pathology: base.pathology.clone(), report_text: e.report_text.clone(), score },
            ));
        }
    }
    let mut best: HashMap<String, (usize, Hit)> = HashMap::new();
    for (label_index, hit) in candidates {
        let replace = match best.get(&hit.entry_id) {
            None => true,
            Some((kept_label, kept)) => hit.score > kept.score || (hit.score == kept.score && label_index < *kept_label),
        };
        if replace {
            best.insert(hit.entry_id.clone(), (label_index, hit));
        }
    }
    let mut out: Vec<Hit> = best.into_values().map(|(_, h)| h).collect();
    out.sort_by(|a, b| desc(a.score, b.score).then_with(|| a.entry_id.cmp(&b.entry_id)));
    out
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) => {
            if n.as_i64().is_some() || n.as_u64().is_some() {
                "integer"
            } else {
                "number"
            }
        }
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn fits(ty: ArgType, v: &Value) -> bool {
    let name = type_name(v);
    match ty {
        ArgType::Number => name == "number" || name == "integer",
        other => name == other.as_str(),
    }
}

/// Every missing field, type mismatch, enum violation and unknown field.
pub fn violations(schema: &ArgSchema, args: &Arguments) -> Vec<Violation> {
    let mut out = Vec::new();
    for (name, prop) in &schema.properties {
        let Some(v) = args.get(name) else {
            if schema.required.contains(name) {
                out.push(Violation::Missing { field: name.clone() });
            }
            continue;
        };
        if !fits(prop.ty, v) {
            out.push(Violation::TypeMismatch { field: name.clone(), expected: prop.ty, found: type_name(v).to_owned() });
        } else if let Some(allowed) = &prop.allowed {
            if !allowed.iter().any(|a| a == v) {
                out.push(Violation::EnumViolation { field: name.clone(), value: evi_core::json::canonical_json(v) });
            }
        }
    }
    let mut extra: Vec<String> = args.keys().filter(|k| !schema.properties.contains_key(*k)).cloned().collect();
    extra.sort();
    out.extend(extra.into_iter().map(|field| Violation::UnknownField { field }));
    out
}
