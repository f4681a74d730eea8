//! Shape contracts for ok payloads, one per evidence kind.

use serde_json::{Map, Value};

use crate::model::EvidenceKind;
use crate::retrieval::LabelSet;

type Obj = Map<String, Value>;

fn object<'a>(v: &'a Value, path: &str) -> Result<&'a Obj, String> {
    v.as_object().ok_or_else(|| format!("{path} must be an object"))
}

fn list<'a>(obj: &'a Obj, key: &str) -> Result<&'a [Value], String> {
    obj.get(key)
        .and_then(Value::as_array)
        .map(Vec::as_slice)
        .ok_or_else(|| format!("{key} must be an array"))
}

fn text<'a>(obj: &'a Obj, key: &str, path: &str) -> Result<&'a str, String> {
    obj.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("{path}.{key} must be a string"))
}

fn number_in(obj: &Obj, key: &str, path: &str, lo: f64, hi: f64) -> Result<f64, String> {
    let v = obj
        .get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| format!("{path}.{key} must be a number"))?;
    if !(lo..=hi).contains(&v) {
        return Err(format!("{path}.{key} = {v} lies outside [{lo}, {hi}]"));
    }
    Ok(v)
}

/// Check an ok payload against the contract of `kind`.
pub fn check_payload(kind: EvidenceKind, payload: &Value, labels: &LabelSet) -> Result<(), String> {
    let root = object(payload, "payload")?;
    match kind {
        EvidenceKind::Classification => {
            for (i, f) in list(root, "findings")?.iter().enumerate() {
                let path = format!("findings[{i}]");
                let f = object(f, &path)?;
                let label = text(f, "label", &path)?;
                if !labels.contains(label) {
                    return Err(format!("{path}.label {label:?} is not in the label set"));
                }
                number_in(f, "prob", &path, 0.0, 1.0)?;
            }
        }
        EvidenceKind::Posture => {
            let view = text(root, "view", "payload")?;
            if !matches!(view, "AP" | "PA" | "LATERAL") {
                return Err(format!("view {view:?} is not one of AP, PA, LATERAL"));
            }
        }
        EvidenceKind::Grounding => {
            for (i, b) in list(root, "boxes")?.iter().enumerate() {
                let path = format!("boxes[{i}]");
                let b = object(b, &path)?;
                let x0 = number_in(b, "x0", &path, 0.0, 1.0)?;
                let y0 = number_in(b, "y0", &path, 0.0, 1.0)?;
                let x1 = number_in(b, "x1", &path, 0.0, 1.0)?;
                let y1 = number_in(b, "y1", &path, 0.0, 1.0)?;
                if x0 >= x1 || y0 >= y1 {
                    return Err(format!("{path} must satisfy x0 < x1 and y0 < y1"));
                }
            }
        }
        EvidenceKind::Segmentation => {
            text(root, "mask_ref", "payload")?;
            number_in(root, "area_fraction", "payload", 0.0, 1.0)?;
        }
        EvidenceKind::Retrieval => {
            for (i, r) in list(root, "reports")?.iter().enumerate() {
                let path = format!("reports[{i}]");
                let r = object(r, &path)?;
                text(r, "report_text", &path)?;
                text(r, "source_id", &path)?;
                number_in(r, "score", &path, -1.0, 1.0)?;
            }
        }
        EvidenceKind::Web => {
            for (i, r) in list(root, "results")?.iter().enumerate() {
                let path = format!("results[{i}]");
                let r = object(r, &path)?;
                text(r, "title", &path)?;
                text(r, "snippet", &path)?;
            }
        }
        EvidenceKind::Custom => {}
    }
    Ok(())
}
