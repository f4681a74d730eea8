//! Report text parsing and citation checks.
//!
//! ```text
//! FINDINGS:
//! - Enlarged cardiac silhouette [E1].
//! - Left basal opacity [E2, E3].
//! IMPRESSION:
//! Cardiomegaly with left basal atelectasis.
//! ```
//!
//! The `FINDINGS:` header is optional. Every non-empty line before
//! `IMPRESSION:` is one finding, with a leading `- ` or `* ` removed.

use std::collections::BTreeSet;

use crate::memory::EvidenceChain;
use crate::model::{EvidenceId, Finding, Report};

const FINDINGS_HEADER: &str = "FINDINGS:";
const IMPRESSION_HEADER: &str = "IMPRESSION:";

/// Evidence ids cited as `[E1]` or `[E1, E2]`, in order of first appearance.
pub fn citations(text: &str) -> Vec<EvidenceId> {
    let mut ids = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        rest = &rest[open + 1..];
        let Some(close) = rest.find(']') else { break };
        let inner = &rest[..close];
        let parsed: Option<Vec<EvidenceId>> = inner
            .split(',')
            .map(|part| part.trim().strip_prefix('E').and_then(|n| n.parse().ok()))
            .collect();
        if let Some(parsed) = parsed {
            for id in parsed {
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
            rest = &rest[close + 1..];
        }
    }
    ids
}

pub fn parse_report(raw: &str) -> Report {
    let mut findings = Vec::new();
    let mut impression = Vec::new();
    let mut in_impression = false;
    for line in raw.lines() {
        let line = line.trim();
        if in_impression {
            impression.push(line);
            continue;
        }
        if let Some(after) = line.strip_prefix(IMPRESSION_HEADER) {
            in_impression = true;
            impression.push(after.trim());
            continue;
        }
        let line = line.strip_prefix(FINDINGS_HEADER).map_or(line, str::trim);
        let line = line
            .strip_prefix("- ")
            .or_else(|| line.strip_prefix("* "))
            .unwrap_or(line)
            .trim();
        if !line.is_empty() {
            findings.push(Finding {
                text: line.to_owned(),
                evidence_ids: citations(line),
            });
        }
    }
    let impression = impression.join("\n").trim().to_owned();
    Report {
        findings,
        impression,
        raw_text: raw.to_owned(),
    }
}

/// Why a report was rejected, or `Ok` when its citations hold.
pub fn check_citations(report: &Report, chain: &EvidenceChain, strict: bool) -> Result<(), String> {
    let known: BTreeSet<EvidenceId> = chain.ids().collect();
    let unknown: Vec<String> = citations(&report.raw_text)
        .into_iter()
        .filter(|id| !known.contains(id))
        .map(|id| format!("E{id}"))
        .collect();
    if !unknown.is_empty() {
        return Err(format!("report cites evidence not in the chain: {}", unknown.join(", ")));
    }
    if strict {
        if let Some(f) = report.findings.iter().find(|f| f.evidence_ids.is_empty()) {
            return Err(format!("finding without evidence citation: {:?}", f.text));
        }
    }
    Ok(())
}
