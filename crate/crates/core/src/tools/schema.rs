//! Argument schemas and argument validation.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::json::canonical_json;
use crate::model::Arguments;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgType {
    String,
    Number,
    Integer,
    Boolean,
    Array,
    Object,
}

impl ArgType {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "string" => ArgType::String,
            "number" => ArgType::Number,
            "integer" => ArgType::Integer,
            "boolean" => ArgType::Boolean,
            "array" => ArgType::Array,
            "object" => ArgType::Object,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ArgType::String => "string",
            ArgType::Number => "number",
            ArgType::Integer => "integer",
            ArgType::Boolean => "boolean",
            ArgType::Array => "array",
            ArgType::Object => "object",
        }
    }

    pub fn matches(self, value: &Value) -> bool {
        match self {
            ArgType::String => value.is_string(),
            ArgType::Number => value.is_number(),
            ArgType::Integer => value.is_i64() || value.is_u64(),
            ArgType::Boolean => value.is_boolean(),
            ArgType::Array => value.is_array(),
            ArgType::Object => value.is_object(),
        }
    }
}

impl fmt::Display for ArgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn json_type_name(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(n) if n.is_i64() || n.is_u64() => "integer",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertySpec {
    #[serde(rename = "type")]
    pub ty: ArgType,
    pub description: String,
    #[serde(default, rename = "enum", skip_serializing_if = "Option::is_none")]
    pub allowed: Option<Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ArgSchema {
    /// Declaration order is kept for prompts and violation order.
    pub properties: IndexMap<String, PropertySpec>,
    pub required: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    Missing { field: String },
    TypeMismatch { field: String, expected: ArgType, found: String },
    EnumViolation { field: String, value: String },
    UnknownField { field: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Missing { field } => write!(f, "missing required field {field:?}"),
            Violation::TypeMismatch { field, expected, found } => {
                write!(f, "field {field:?} expected {expected}, got {found}")
            }
            Violation::EnumViolation { field, value } => {
                write!(f, "field {field:?} value {value} is not one of the allowed values")
            }
            Violation::UnknownField { field } => write!(f, "unknown field {field:?}"),
        }
    }
}

pub fn render_violations(violations: &[Violation]) -> String {
    violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl ArgSchema {
    pub fn is_required(&self, name: &str) -> bool {
        self.required.iter().any(|r| r == name)
    }

    /// Every violation of `arguments` against this schema: per declared
    /// property in declaration order, then unknown fields in key order.
    pub fn validate(&self, arguments: &Arguments) -> Result<(), Vec<Violation>> {
        let mut violations = Vec::new();
        for (name, prop) in &self.properties {
            match arguments.get(name) {
                None if self.is_required(name) => violations.push(Violation::Missing { field: name.clone() }),
                None => {}
                Some(value) if !prop.ty.matches(value) => violations.push(Violation::TypeMismatch {
                    field: name.clone(),
                    expected: prop.ty,
                    found: json_type_name(value).to_owned(),
                }),
                Some(value) => {
                    if let Some(allowed) = &prop.allowed {
                        if !allowed.contains(value) {
                            violations.push(Violation::EnumViolation {
                                field: name.clone(),
                                value: canonical_json(value),
                            });
                        }
                    }
                }
            }
        }
        let mut unknown: Vec<&String> = arguments.keys().filter(|k| !self.properties.contains_key(*k)).collect();
        unknown.sort();
        violations.extend(unknown.into_iter().map(|k| Violation::UnknownField { field: k.clone() }));
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn grounder() -> ArgSchema {
        let mut properties = IndexMap::new();
        properties.insert(
            "image".to_string(),
            PropertySpec { ty: ArgType::String, description: "image".into(), allowed: None },
        );
        properties.insert(
            "disease".to_string(),
            PropertySpec { ty: ArgType::String, description: "disease".into(), allowed: None },
        );
        ArgSchema { properties, required: vec!["image".into(), "disease".into()] }
    }

    fn args(v: Value) -> Arguments {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn valid_arguments() {
        assert_eq!(grounder().validate(&args(json!({"image": "i", "disease": "Edema"}))), Ok(()));
    }

    #[test]
    fn missing_required() {
        assert_eq!(
            grounder().validate(&args(json!({"image": "i"}))),
            Err(vec![Violation::Missing { field: "disease".into() }])
        );
    }

    #[test]
    fn wrong_type() {
        assert_eq!(
            grounder().validate(&args(json!({"image": "i", "disease": 7}))),
            Err(vec![Violation::TypeMismatch {
                field: "disease".into(),
                expected: ArgType::String,
                found: "integer".into()
            }])
        );
    }

    #[test]
    fn all_violations_reported() {
        let mut schema = grounder();
        schema.properties["disease"].allowed = Some(vec![json!("Edema"), json!("Pneumonia")]);
        let got = schema.validate(&args(json!({"disease": "Flu", "zeta": 1, "alpha": 2}))).unwrap_err();
        assert_eq!(
            got,
            vec![
                Violation::Missing { field: "image".into() },
                Violation::EnumViolation { field: "disease".into(), value: "\"Flu\"".into() },
                Violation::UnknownField { field: "alpha".into() },
                Violation::UnknownField { field: "zeta".into() },
            ]
        );
        assert!(render_violations(&got).contains("missing required field \"image\""));
    }

    #[test]
    fn integer_versus_number() {
        assert!(ArgType::Integer.matches(&json!(3)));
        assert!(!ArgType::Integer.matches(&json!(3.5)));
        assert!(ArgType::Number.matches(&json!(3)));
        assert!(ArgType::Number.matches(&json!(3.5)));
    }
}
