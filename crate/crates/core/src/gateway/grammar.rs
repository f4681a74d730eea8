//! Emission grammar: one ```evi fenced block holding a single object with
//! exactly one of `plan`, `action` (plus `args`) or `final`. Text outside the
//! fence is the thought trace.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::json::canonical_json;
use crate::model::{Arguments, ExecutionPlan, PlanStep, ToolResult};

use super::ChatMessage;

const FENCE_OPEN: &str = "```evi";
const FENCE_CLOSE: &str = "```";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Planning,
    Acting,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum ParseError {
    MissingBlock,
    MultipleBlocks { count: usize },
    UnterminatedBlock,
    InvalidJson { message: String },
    NotAnObject,
    NoDecisionKey,
    ConflictingKeys { keys: Vec<String> },
    MissingField { field: String },
    UnexpectedField { field: String },
    FieldType { field: String, expected: String },
    EmptyToolName,
    EmptyPlan,
    EmptyStepDescription { step: usize },
    WrongPhase { key: String, phase: Phase },
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseError::MissingBlock => write!(f, "no ```evi block found"),
            ParseError::MultipleBlocks { count } => {
                write!(f, "found {count} ```evi blocks; emit exactly one")
            }
            ParseError::UnterminatedBlock => write!(f, "```evi block is not closed"),
            ParseError::InvalidJson { message } => write!(f, "block is not valid JSON: {message}"),
            ParseError::NotAnObject => write!(f, "block must contain a JSON object"),
            ParseError::NoDecisionKey => {
                write!(f, "object needs one of the keys \"plan\", \"action\", \"final\"")
            }
            ParseError::ConflictingKeys { keys } => {
                write!(f, "object has several decision keys: {}", keys.join(", "))
            }
            ParseError::MissingField { field } => write!(f, "missing field {field:?}"),
            ParseError::UnexpectedField { field } => write!(f, "unexpected field {field:?}"),
            ParseError::FieldType { field, expected } => {
                write!(f, "field {field:?} must be {expected}")
            }
            ParseError::EmptyToolName => write!(f, "\"action\" must name a tool"),
            ParseError::EmptyPlan => write!(f, "\"plan\" has no steps"),
            ParseError::EmptyStepDescription { step } => {
                write!(f, "plan step {step} has an empty description")
            }
            ParseError::WrongPhase { key, phase } => {
                let phase = match phase {
                    Phase::Planning => "planning",
                    Phase::Acting => "acting",
                };
                write!(f, "\"{key}\" is not allowed in the {phase} phase")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum PlannerDecision {
    Plan {
        plan: ExecutionPlan,
    },
    Invoke {
        tool_name: String,
        arguments: Arguments,
        thought: String,
    },
    Final {
        answer: String,
    },
    Malformed {
        raw: String,
        error: ParseError,
    },
}

struct Block<'a> {
    body: &'a str,
    thought: String,
}

fn find_block(raw: &str) -> Result<Block<'_>, ParseError> {
    let mut spans = Vec::new();
    let mut cursor = 0;
    while let Some(found) = raw[cursor..].find(FENCE_OPEN) {
        let open = cursor + found;
        let body_start = open + FENCE_OPEN.len();
        // ```evidence, ```evil etc. are not our fence
        if raw[body_start..]
            .chars()
            .next()
            .is_some_and(|c| !c.is_whitespace())
        {
            cursor = body_start;
            continue;
        }
        let Some(len) = raw[body_start..].find(FENCE_CLOSE) else {
            return Err(ParseError::UnterminatedBlock);
        };
        let close = body_start + len;
        spans.push((open, body_start, close, close + FENCE_CLOSE.len()));
        cursor = close + FENCE_CLOSE.len();
    }
    match spans.as_slice() {
        [] => Err(ParseError::MissingBlock),
        [(open, body_start, close, end)] => {
            let before = raw[..*open].trim();
            let after = raw[*end..].trim();
            let thought = match (before.is_empty(), after.is_empty()) {
                (true, _) => after.to_owned(),
                (false, true) => before.to_owned(),
                (false, false) => format!("{before}\n{after}"),
            };
            Ok(Block {
                body: &raw[*body_start..*close],
                thought,
            })
        }
        many => Err(ParseError::MultipleBlocks { count: many.len() }),
    }
}

fn parse_plan(value: &Value) -> Result<ExecutionPlan, ParseError> {
    let items = value.as_array().ok_or_else(|| ParseError::FieldType {
        field: "plan".into(),
        expected: "an array of steps".into(),
    })?;
    if items.is_empty() {
        return Err(ParseError::EmptyPlan);
    }
    let mut steps = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let step_id = i + 1;
        let field = format!("plan[{i}]");
        let (description, tool) = match item {
            Value::String(s) => (s.clone(), None),
            Value::Object(obj) => {
                for key in obj.keys() {
                    if !matches!(key.as_str(), "description" | "tool" | "step") {
                        return Err(ParseError::UnexpectedField {
                            field: format!("{field}.{key}"),
                        });
                    }
                }
                if let Some(step) = obj.get("step") {
                    if step.as_u64() != Some(step_id as u64) {
                        return Err(ParseError::FieldType {
                            field: format!("{field}.step"),
                            expected: format!("the integer {step_id}"),
                        });
                    }
                }
                let description = match obj.get("description") {
                    Some(Value::String(s)) => s.clone(),
                    Some(_) => {
                        return Err(ParseError::FieldType {
                            field: format!("{field}.description"),
                            expected: "a string".into(),
                        })
                    }
                    None => {
                        return Err(ParseError::MissingField {
                            field: format!("{field}.description"),
                        })
                    }
                };
                let tool = match obj.get("tool") {
                    None | Some(Value::Null) => None,
                    Some(Value::String(s)) => Some(s.clone()),
                    Some(_) => {
                        return Err(ParseError::FieldType {
                            field: format!("{field}.tool"),
                            expected: "a string".into(),
                        })
                    }
                };
                (description, tool)
            }
            _ => {
                return Err(ParseError::FieldType {
                    field,
                    expected: "a string or an object with \"description\"".into(),
                })
            }
        };
        if description.trim().is_empty() {
            return Err(ParseError::EmptyStepDescription { step: step_id });
        }
        steps.push(PlanStep {
            step_id: step_id as u32,
            description,
            suggested_tool: tool,
        });
    }
    Ok(ExecutionPlan { steps })
}

fn parse_object(obj: &Map<String, Value>, thought: String, phase: Phase) -> Result<PlannerDecision, ParseError> {
    let present: Vec<&str> = ["plan", "action", "final"]
        .into_iter()
        .filter(|k| obj.contains_key(*k))
        .collect();
    let key = match present.as_slice() {
        [] => return Err(ParseError::NoDecisionKey),
        [one] => *one,
        many => {
            return Err(ParseError::ConflictingKeys {
                keys: many.iter().map(|k| k.to_string()).collect(),
            })
        }
    };
    let allowed = match phase {
        Phase::Planning => key == "plan",
        Phase::Acting => key != "plan",
    };
    if !allowed {
        return Err(ParseError::WrongPhase { key: key.into(), phase });
    }
    if key == "action" && !obj.contains_key("args") {
        return Err(ParseError::MissingField { field: "args".into() });
    }
    if let Some(extra) = obj
        .keys()
        .find(|k| k.as_str() != key && !(key == "action" && k.as_str() == "args"))
    {
        return Err(ParseError::UnexpectedField { field: extra.clone() });
    }
    match key {
        "plan" => Ok(PlannerDecision::Plan {
            plan: parse_plan(&obj["plan"])?,
        }),
        "action" => {
            let tool_name = obj["action"].as_str().ok_or_else(|| ParseError::FieldType {
                field: "action".into(),
                expected: "a string".into(),
            })?;
            if tool_name.trim().is_empty() {
                return Err(ParseError::EmptyToolName);
            }
            let arguments = obj["args"].as_object().ok_or_else(|| ParseError::FieldType {
                field: "args".into(),
                expected: "an object".into(),
            })?;
            Ok(PlannerDecision::Invoke {
                tool_name: tool_name.to_owned(),
                arguments: arguments.clone(),
                thought,
            })
        }
        _ => {
            let answer = obj["final"].as_str().ok_or_else(|| ParseError::FieldType {
                field: "final".into(),
                expected: "a string".into(),
            })?;
            Ok(PlannerDecision::Final {
                answer: answer.to_owned(),
            })
        }
    }
}

fn try_parse(raw: &str, phase: Phase) -> Result<PlannerDecision, ParseError> {
    let block = find_block(raw)?;
    let value: Value = serde_json::from_str(block.body.trim()).map_err(|e| ParseError::InvalidJson {
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or(ParseError::NotAnObject)?;
    parse_object(obj, block.thought, phase)
}

/// Parse one backend emission. Never fails: grammar violations come back as
/// [`PlannerDecision::Malformed`].
pub fn parse_decision(raw: &str, phase: Phase) -> PlannerDecision {
    try_parse(raw, phase).unwrap_or_else(|error| PlannerDecision::Malformed {
        raw: raw.to_owned(),
        error,
    })
}

/// Canonical emission for a decision; `parse_decision` maps it back to an equal value.
pub fn render_decision(decision: &PlannerDecision) -> String {
    let (thought, body) = match decision {
        PlannerDecision::Plan { plan } => {
            let steps: Vec<Value> = plan
                .steps
                .iter()
                .map(|s| match &s.suggested_tool {
                    Some(tool) => json!({"description": s.description, "tool": tool}),
                    None => json!({"description": s.description}),
                })
                .collect();
            ("", json!({ "plan": steps }))
        }
        PlannerDecision::Invoke {
            tool_name,
            arguments,
            thought,
        } => (
            thought.as_str(),
            json!({"action": tool_name, "args": Value::Object(arguments.clone())}),
        ),
        PlannerDecision::Final { answer } => ("", json!({ "final": answer })),
        PlannerDecision::Malformed { raw, .. } => return raw.clone(),
    };
    let block = format!("{FENCE_OPEN}\n{}\n{FENCE_CLOSE}", canonical_json(&body));
    if thought.is_empty() {
        block
    } else {
        format!("{thought}\n{block}")
    }
}

/// Tool-role message fed back to the planner after a dispatch.
pub fn render_tool_result(result: &ToolResult) -> ChatMessage {
    let text = match (&result.payload, result.is_ok()) {
        (Some(payload), true) => canonical_json(payload),
        _ => format!(
            "TOOL_ERROR: {}: {}",
            result.status.as_str(),
            result.diagnostic.as_deref().unwrap_or("no diagnostic")
        ),
    };
    ChatMessage::tool(result.call_id, text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ToolStatus;

    fn malformed(raw: &str, phase: Phase) -> ParseError {
        match parse_decision(raw, phase) {
            PlannerDecision::Malformed { error, .. } => error,
            other => panic!("expected malformed, got {other:?}"),
        }
    }

    #[test]
    fn action_block() {
        let raw = "Screen first.\n```evi\n{\"action\":\"classifier\",\"args\":{\"image\":\"img0\"}}\n```";
        match parse_decision(raw, Phase::Acting) {
            PlannerDecision::Invoke { tool_name, arguments, thought } => {
                assert_eq!(tool_name, "classifier");
                assert_eq!(arguments["image"], "img0");
                assert_eq!(thought, "Screen first.");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn final_block() {
        assert_eq!(
            parse_decision("```evi {\"final\":\"Report text.\"} ```", Phase::Acting),
            PlannerDecision::Final { answer: "Report text.".into() }
        );
    }

    #[test]
    fn prose_is_missing_block() {
        assert_eq!(
            malformed("I think we should look at the lungs", Phase::Acting),
            ParseError::MissingBlock
        );
    }

    #[test]
    fn action_without_args() {
        assert_eq!(
            malformed("```evi\n{\"action\":\"classifier\"}\n```", Phase::Acting),
            ParseError::MissingField { field: "args".into() }
        );
    }

    #[test]
    fn block_level_errors() {
        assert_eq!(
            malformed("```evi\n{\"final\":\"a\"}\n```\n```evi\n{\"final\":\"b\"}\n```", Phase::Acting),
            ParseError::MultipleBlocks { count: 2 }
        );
        assert_eq!(malformed("```evi\n{\"final\":\"a\"}", Phase::Acting), ParseError::UnterminatedBlock);
        assert!(matches!(malformed("```evi\n{final}\n```", Phase::Acting), ParseError::InvalidJson { .. }));
        assert_eq!(malformed("```evi\n[1]\n```", Phase::Acting), ParseError::NotAnObject);
        assert_eq!(malformed("```evi\n{}\n```", Phase::Acting), ParseError::NoDecisionKey);
        // other fences do not count
        assert_eq!(malformed("```json\n{\"final\":\"a\"}\n```", Phase::Acting), ParseError::MissingBlock);
        assert_eq!(malformed("```evidence\n{\"final\":\"a\"}\n```", Phase::Acting), ParseError::MissingBlock);
    }

    #[test]
    fn object_level_errors() {
        assert_eq!(
            malformed("```evi\n{\"final\":\"a\",\"action\":\"x\",\"args\":{}}\n```", Phase::Acting),
            ParseError::ConflictingKeys { keys: vec!["action".into(), "final".into()] }
        );
        assert_eq!(
            malformed("```evi\n{\"final\":\"a\",\"note\":1}\n```", Phase::Acting),
            ParseError::UnexpectedField { field: "note".into() }
        );
        assert_eq!(
            malformed("```evi\n{\"final\":\"a\",\"args\":{}}\n```", Phase::Acting),
            ParseError::UnexpectedField { field: "args".into() }
        );
        assert_eq!(
            malformed("```evi\n{\"action\":\"\",\"args\":{}}\n```", Phase::Acting),
            ParseError::EmptyToolName
        );
        assert!(matches!(
            malformed("```evi\n{\"action\":\"x\",\"args\":[]}\n```", Phase::Acting),
            ParseError::FieldType { .. }
        ));
        assert!(matches!(
            malformed("```evi\n{\"final\":3}\n```", Phase::Acting),
            ParseError::FieldType { .. }
        ));
    }

    #[test]
    fn phase_rules() {
        let plan = "```evi\n{\"plan\":[\"Detect lesions\"]}\n```";
        assert!(matches!(parse_decision(plan, Phase::Planning), PlannerDecision::Plan { .. }));
        assert!(matches!(malformed(plan, Phase::Acting), ParseError::WrongPhase { .. }));
        assert!(matches!(
            malformed("```evi\n{\"final\":\"x\"}\n```", Phase::Planning),
            ParseError::WrongPhase { .. }
        ));
    }

    #[test]
    fn plan_forms() {
        let raw = "```evi\n{\"plan\":[\"Detect lesions in the image\",{\"step\":2,\"description\":\"Localize diseases output by the classifier\",\"tool\":\"grounder\"}]}\n```";
        let PlannerDecision::Plan { plan } = parse_decision(raw, Phase::Planning) else {
            panic!()
        };
        assert_eq!(plan.steps.len(), 2);
        assert_eq!(plan.steps[1].step_id, 2);
        assert_eq!(plan.steps[1].suggested_tool.as_deref(), Some("grounder"));
        assert_eq!(malformed("```evi\n{\"plan\":[]}\n```", Phase::Planning), ParseError::EmptyPlan);
        assert_eq!(
            malformed("```evi\n{\"plan\":[\" \"]}\n```", Phase::Planning),
            ParseError::EmptyStepDescription { step: 1 }
        );
        assert!(matches!(
            malformed("```evi\n{\"plan\":[{\"step\":5,\"description\":\"x\"}]}\n```", Phase::Planning),
            ParseError::FieldType { .. }
        ));
    }

    #[test]
    fn deterministic() {
        let raw = "hmm ```evi {\"action\":\"grounder\",\"args\":{\"disease\":\"Edema\"}} ``` ok";
        assert_eq!(parse_decision(raw, Phase::Acting), parse_decision(raw, Phase::Acting));
    }

    #[test]
    fn tool_result_rendering() {
        let ok = ToolResult::ok(4, json!({"findings": ["Edema"]}));
        let msg = render_tool_result(&ok);
        assert!(msg.text.contains(r#""findings":["Edema"]"#));
        assert_eq!(msg.call_id, Some(4));
        assert_eq!(render_tool_result(&ok), msg);

        let bad = ToolResult::failed(5, ToolStatus::ValidationError, "missing required field \"disease\"");
        let msg = render_tool_result(&bad);
        assert!(msg.text.starts_with("TOOL_ERROR:"));
        assert!(msg.text.contains("missing required field"));
    }
}
