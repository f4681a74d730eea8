//! Append-only evidence memory and the purified evidence chain built from it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::json::canonical_json;
use crate::model::{CallId, EvidenceId, EvidenceKind, ToolResult};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemoryError {
    #[error("evidence id {found} out of order; expected {expected}")]
    MemoryOrder { expected: EvidenceId, found: EvidenceId },
    #[error("evidence {evidence_id} sourced from call {call_id} whose result status is {status}")]
    InvalidEvidence {
        evidence_id: EvidenceId,
        call_id: CallId,
        status: &'static str,
    },
    #[error("evidence {evidence_id} names call {item_call} but was given the result of call {result_call}")]
    SourceMismatch {
        evidence_id: EvidenceId,
        item_call: CallId,
        result_call: CallId,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub evidence_id: EvidenceId,
    pub kind: EvidenceKind,
    pub payload: Value,
    pub source_call_id: CallId,
}

impl EvidenceItem {
    /// `E<id> [<kind>] <canonical payload>`: the line form used in every prompt.
    pub fn render(&self) -> String {
        format!("E{} [{}] {}", self.evidence_id, self.kind, canonical_json(&self.payload))
    }
}

/// Tool outputs accumulated during the acting phase. Items can only be appended.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceMemory {
    items: Vec<EvidenceItem>,
}

impl EvidenceMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn items(&self) -> &[EvidenceItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn next_id(&self) -> EvidenceId {
        self.items.last().map_or(1, |item| item.evidence_id + 1)
    }

    pub fn get(&self, id: EvidenceId) -> Option<&EvidenceItem> {
        // ids are dense from 1
        id.checked_sub(1)
            .and_then(|i| self.items.get(i as usize))
            .filter(|item| item.evidence_id == id)
    }

    /// Append `item`, whose source call produced `source`.
    pub fn append(&mut self, item: EvidenceItem, source: &ToolResult) -> Result<(), MemoryError> {
        let expected = self.next_id();
        if item.evidence_id != expected {
            return Err(MemoryError::MemoryOrder {
                expected,
                found: item.evidence_id,
            });
        }
        if source.call_id != item.source_call_id {
            return Err(MemoryError::SourceMismatch {
                evidence_id: item.evidence_id,
                item_call: item.source_call_id,
                result_call: source.call_id,
            });
        }
        if !source.is_ok() {
            return Err(MemoryError::InvalidEvidence {
                evidence_id: item.evidence_id,
                call_id: source.call_id,
                status: source.status.as_str(),
            });
        }
        self.items.push(item);
        Ok(())
    }

    pub fn render(&self) -> String {
        self.items.iter().map(|item| item.render() + "\n").collect()
    }
}

/// Evidence that conditions report generation.
///
/// When `grouped` is set, entries are ordered by kind (canonical kind order)
/// and then by memory order, with repeated payloads of a kind removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceChain {
    pub entries: Vec<EvidenceItem>,
    pub provenance: BTreeMap<EvidenceId, CallId>,
    pub grouped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

impl EvidenceChain {
    pub fn empty() -> Self {
        Self {
            entries: Vec::new(),
            provenance: BTreeMap::new(),
            grouped: true,
            summary: None,
        }
    }

    pub fn contains(&self, id: EvidenceId) -> bool {
        self.provenance.contains_key(&id)
    }

    pub fn get(&self, id: EvidenceId) -> Option<&EvidenceItem> {
        self.entries.iter().find(|e| e.evidence_id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = EvidenceId> + '_ {
        self.entries.iter().map(|e| e.evidence_id)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut current: Option<EvidenceKind> = None;
        for entry in &self.entries {
            if self.grouped && current != Some(entry.kind) {
                out.push_str(&format!("## {}\n", entry.kind));
                current = Some(entry.kind);
            }
            out.push_str(&entry.render());
            out.push('\n');
        }
        if let Some(summary) = &self.summary {
            out.push_str("## summary\n");
            out.push_str(summary.trim());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ToolStatus;
    use serde_json::json;

    fn item(id: EvidenceId, call: CallId) -> EvidenceItem {
        EvidenceItem {
            evidence_id: id,
            kind: EvidenceKind::Classification,
            payload: json!({"findings": []}),
            source_call_id: call,
        }
    }

    fn ok(call: CallId) -> ToolResult {
        ToolResult::ok(call, json!({}))
    }

    #[test]
    fn append_to_empty() {
        let mut mem = EvidenceMemory::new();
        mem.append(item(1, 1), &ok(1)).unwrap();
        assert_eq!(mem.len(), 1);
    }

    #[test]
    fn monotone_append() {
        let mut mem = EvidenceMemory::new();
        mem.append(item(1, 1), &ok(1)).unwrap();
        mem.append(item(2, 3), &ok(3)).unwrap();
        let before = mem.items().to_vec();
        mem.append(item(3, 4), &ok(4)).unwrap();
        assert_eq!(mem.items().iter().map(|i| i.evidence_id).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(&mem.items()[..2], &before[..]);
    }

    #[test]
    fn repeated_id_rejected() {
        let mut mem = EvidenceMemory::new();
        mem.append(item(1, 1), &ok(1)).unwrap();
        mem.append(item(2, 2), &ok(2)).unwrap();
        let err = mem.append(item(2, 3), &ok(3)).unwrap_err();
        assert_eq!(err, MemoryError::MemoryOrder { expected: 3, found: 2 });
        // oracle: ids in the list stay unique
        let mut ids: Vec<_> = mem.items().iter().map(|i| i.evidence_id).collect();
        ids.dedup();
        assert_eq!(ids.len(), mem.len());
    }

    #[test]
    fn failed_source_rejected() {
        let mut mem = EvidenceMemory::new();
        let bad = ToolResult::failed(1, ToolStatus::ToolError, "boom");
        assert!(matches!(
            mem.append(item(1, 1), &bad),
            Err(MemoryError::InvalidEvidence { .. })
        ));
        assert!(mem.is_empty());
    }

    #[test]
    fn mismatched_source_rejected() {
        let mut mem = EvidenceMemory::new();
        assert!(matches!(
            mem.append(item(1, 1), &ok(2)),
            Err(MemoryError::SourceMismatch { .. })
        ));
    }

    #[test]
    fn lookup_by_id() {
        let mut mem = EvidenceMemory::new();
        mem.append(item(1, 5), &ok(5)).unwrap();
        assert_eq!(mem.get(1).unwrap().source_call_id, 5);
        assert!(mem.get(0).is_none());
        assert!(mem.get(2).is_none());
    }
}
