//! Rule-based evidence extraction.

use std::collections::BTreeSet;

use crate::json::canonical_json;
use crate::memory::{EvidenceChain, EvidenceMemory};
use crate::model::{EvidenceKind, ToolResult};

/// Chain built from `memory`: items grouped by kind in canonical kind order,
/// memory order within a kind, later items whose canonical payload repeats an
/// earlier one of the same kind dropped. With `pass_through` the memory is
/// copied unchanged and ungrouped.
pub fn extract_chain(memory: &EvidenceMemory, pass_through: bool) -> EvidenceChain {
    let mut chain = EvidenceChain::empty();
    if pass_through {
        chain.grouped = false;
        chain.entries = memory.items().to_vec();
    } else {
        for kind in EvidenceKind::ALL {
            let mut seen = BTreeSet::new();
            for item in memory.items().iter().filter(|i| i.kind == kind) {
                if seen.insert(canonical_json(&item.payload)) {
                    chain.entries.push(item.clone());
                }
            }
        }
    }
    chain.provenance = chain.entries.iter().map(|e| (e.evidence_id, e.source_call_id)).collect();
    chain
}

/// Rebuild memory from a sequence of ok results and their kinds; used by tests
/// and replay tooling that only have the dispatch record.
pub fn memory_from_results<'a>(results: impl IntoIterator<Item = (EvidenceKind, &'a ToolResult)>) -> EvidenceMemory {
    let mut memory = EvidenceMemory::new();
    for (kind, result) in results {
        let Some(payload) = result.payload.clone().filter(|_| result.is_ok()) else { continue };
        let item = crate::memory::EvidenceItem {
            evidence_id: memory.next_id(),
            kind,
            payload,
            source_call_id: result.call_id,
        };
        memory.append(item, result).expect("ok result with fresh id always appends");
    }
    memory
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ToolStatus;
    use serde_json::json;

    fn memory() -> EvidenceMemory {
        let cls = json!({"findings": [{"label": "Edema", "prob": 0.8}]});
        let results = [
            ToolResult::ok(1, json!({"disease": "Edema", "boxes": []})),
            ToolResult::ok(2, cls.clone()),
            ToolResult::failed(3, ToolStatus::ToolError, "x"),
            ToolResult::ok(4, cls),
        ];
        let kinds = [
            EvidenceKind::Grounding,
            EvidenceKind::Classification,
            EvidenceKind::Classification,
            EvidenceKind::Classification,
        ];
        memory_from_results(kinds.into_iter().zip(results.iter()))
    }

    #[test]
    fn grouped_and_deduplicated() {
        let m = memory();
        assert_eq!(m.len(), 3);
        let chain = extract_chain(&m, false);
        let ids: Vec<_> = chain.ids().collect();
        // classification (E2) precedes grounding (E1); E3 repeats E2's payload
        assert_eq!(ids, vec![2, 1]);
        assert!(chain.grouped);
        assert_eq!(chain.provenance.len(), 2);
        assert_eq!(chain.provenance[&2], 2);
    }

    #[test]
    fn pass_through() {
        let m = memory();
        let chain = extract_chain(&m, true);
        assert!(!chain.grouped);
        assert_eq!(chain.entries, m.items());
        assert_eq!(extract_chain(&EvidenceMemory::new(), false), EvidenceChain::empty());
    }
}
