//! Fixture tables backing the builtin expert mocks.
//!
//! ```json
//! {"images": {"f1": {"classification": [{"label": "Cardiomegaly", "prob": 0.91}],
//!                    "posture": "AP",
//!                    "grounding": {"Cardiomegaly": [{"x0": 0.3, "y0": 0.4, "x1": 0.7, "y1": 0.8}]},
//!                    "segmentation": {"heart": {"mask_ref": "masks/f1_heart.png", "area_fraction": 0.18}}}},
//!  "web": {"cardiomegaly": [{"title": "...", "snippet": "..."}]}}
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::LabelSet;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FixtureError {
    #[error("cannot read fixtures {path}: {message}")]
    Io { path: String, message: String },
    #[error("fixtures are not valid: {0}")]
    Json(String),
    #[error("fixture {path}: {reason}")]
    Invalid { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum View {
    AP,
    PA,
    LATERAL,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelProb {
    pub label: String,
    pub prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub fn is_normalized(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        unit(self.x0) && unit(self.y0) && unit(self.x1) && unit(self.y1) && self.x0 < self.x1 && self.y0 < self.y1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segmentation {
    pub mask_ref: String,
    pub area_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WebResult {
    pub title: String,
    pub snippet: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageFixture {
    #[serde(default)]
    pub classification: Option<Vec<LabelProb>>,
    #[serde(default)]
    pub posture: Option<View>,
    #[serde(default)]
    pub grounding: BTreeMap<String, Vec<BoundingBox>>,
    #[serde(default)]
    pub segmentation: BTreeMap<String, Segmentation>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSet {
    #[serde(default)]
    pub images: BTreeMap<String, ImageFixture>,
    #[serde(default)]
    pub web: BTreeMap<String, Vec<WebResult>>,
}

impl FixtureSet {
    pub fn parse(text: &str, labels: &LabelSet) -> Result<Self, FixtureError> {
        let set: FixtureSet = serde_json::from_str(text).map_err(|e| FixtureError::Json(e.to_string()))?;
        set.validate(labels)?;
        Ok(set)
    }

    pub fn load(path: &Path, labels: &LabelSet) -> Result<Self, FixtureError> {
        let text = std::fs::read_to_string(path).map_err(|e| FixtureError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, labels)
    }

    pub fn validate(&self, labels: &LabelSet) -> Result<(), FixtureError> {
        let invalid = |path: String, reason: &str| Err(FixtureError::Invalid { path, reason: reason.into() });
        for (image, fx) in &self.images {
            for (i, lp) in fx.classification.iter().flatten().enumerate() {
                let path = format!("images.{image}.classification[{i}]");
                if !labels.contains(&lp.label) {
                    return invalid(path, "label outside the label set");
                }
                if !(0.0..=1.0).contains(&lp.prob) {
                    return invalid(path, "prob outside [0, 1]");
                }
            }
            for (disease, boxes) in &fx.grounding {
                if !labels.contains(disease) {
                    return invalid(format!("images.{image}.grounding.{disease}"), "label outside the label set");
                }
                if let Some(i) = boxes.iter().position(|b| !b.is_normalized()) {
                    return invalid(format!("images.{image}.grounding.{disease}[{i}]"), "box is not normalized with x0<x1, y0<y1");
                }
            }
            for (target, seg) in &fx.segmentation {
                if !(0.0..=1.0).contains(&seg.area_fraction) {
                    return invalid(format!("images.{image}.segmentation.{target}"), "area_fraction outside [0, 1]");
                }
            }
        }
        Ok(())
    }
}
