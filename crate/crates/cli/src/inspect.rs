//! Human-readable views of a trajectory file.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use evi_core::json::canonical_json;
use evi_core::memory::EvidenceItem;
use evi_core::model::{Finding, Report, ToolCall};
use evi_core::retrieval::LabelSet;
use evi_core::trajectory::{Event, LoggedEvent, Stage, TrajectoryLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Consistent,
    Inconsistent,
    Unknown,
}

impl Mark {
    fn render(self, colour: bool) -> String {
        let (text, code) = match self {
            Mark::Consistent => ("[+]", "32"),
            Mark::Inconsistent => ("[-]", "31"),
            Mark::Unknown => ("[?]", "33"),
        };
        if colour {
            format!("\x1b[{code}m{text}\x1b[0m")
        } else {
            text.to_owned()
        }
    }
}

/// Compare the pathologies a finding names with those the reference report names.
pub fn mark(finding: &Finding, ground_truth: &str, labels: &LabelSet) -> Mark {
    let text = finding.text.to_lowercase();
    let truth = ground_truth.to_lowercase();
    let named: Vec<String> = labels.iter().map(str::to_lowercase).filter(|l| text.contains(l.as_str())).collect();
    if named.is_empty() {
        Mark::Unknown
    } else if named.iter().all(|l| truth.contains(l.as_str())) {
        Mark::Consistent
    } else {
        Mark::Inconsistent
    }
}

pub struct View<'a> {
    pub ground_truth: Option<&'a str>,
    pub labels: LabelSet,
    pub colour: bool,
}

impl View<'_> {
    fn prefix(&self, finding: &Finding) -> String {
        match self.ground_truth {
            Some(gt) => format!("{} ", mark(finding, gt, &self.labels).render(self.colour)),
            None => String::new(),
        }
    }
}

fn report(log: &TrajectoryLog) -> Option<&Report> {
    log.events().iter().find_map(|e| match &e.event {
        Event::ReportEmitted { report } => Some(report),
        _ => None,
    })
}

fn no_report(log: &TrajectoryLog) -> String {
    let status = log.status().map_or("incomplete", |s| s.as_str());
    format!("no report: run ended {status}\n")
}

/// Findings and impression.
pub fn render_report(log: &TrajectoryLog, view: &View<'_>) -> String {
    let Some(report) = report(log) else {
        return no_report(log);
    };
    let mut out = String::from("FINDINGS:\n");
    for f in &report.findings {
        let _ = writeln!(out, "{}- {}", view.prefix(f), f.text);
    }
    let _ = writeln!(out, "IMPRESSION: {}", report.impression);
    out
}

/// Each finding followed by the evidence it cites and the call that produced it.
pub fn render_evidence(log: &TrajectoryLog, view: &View<'_>) -> String {
    let Some(report) = report(log) else {
        return no_report(log);
    };
    let mut items: BTreeMap<u64, &EvidenceItem> = BTreeMap::new();
    let mut calls: BTreeMap<u64, &ToolCall> = BTreeMap::new();
    for e in log.events() {
        match &e.event {
            Event::EvidenceAppended { item } => {
                items.insert(item.evidence_id, item);
            }
            Event::ToolDispatched { call } => {
                calls.insert(call.call_id, call);
            }
            _ => {}
        }
    }
    let mut out = String::new();
    for (i, f) in report.findings.iter().enumerate() {
        let _ = writeln!(out, "{}F{}: {}", view.prefix(f), i + 1, f.text);
        if f.evidence_ids.is_empty() {
            out.push_str("  (no cited evidence)\n");
        }
        for id in &f.evidence_ids {
            match items.get(id) {
                Some(item) => {
                    let call = calls.get(&item.source_call_id);
                    let tool = call.map_or("?", |c| c.tool_name.as_str());
                    let round = call.map_or(0, |c| c.round);
                    let _ = writeln!(
                        out,
                        "  E{id} ← {tool} (call {}, round {round}) [{}] {}",
                        item.source_call_id,
                        item.kind,
                        canonical_json(&item.payload)
                    );
                }
                None => {
                    let _ = writeln!(out, "  E{id} ← (not in the trajectory)");
                }
            }
        }
    }
    let _ = writeln!(out, "IMPRESSION: {}", report.impression);
    out
}

fn clip(text: &str, max: usize) -> String {
    let flat = text.replace('\n', "⏎");
    if flat.chars().count() <= max {
        flat
    } else {
        let cut: String = flat.chars().take(max).collect();
        format!("{cut}…")
    }
}

fn detail(event: &Event) -> String {
    match event {
        Event::PlanEmitted { plan } => {
            let steps: Vec<&str> = plan.steps.iter().map(|s| s.description.as_str()).collect();
            format!("{} steps: {}", steps.len(), steps.join("; "))
        }
        Event::PlannerRawEmission { stage: s, round, text } => {
            format!("{} round {round}: {}", stage(s), clip(text, 80))
        }
        Event::DecisionParsed { round, decision } => format!("round {round}: {}", clip(&canonical_json(&serde_json::to_value(decision).unwrap_or_default()), 100)),
        Event::ParseFailure { stage: s, round, attempt, error } => format!("{} round {round} attempt {attempt}: {error}", stage(s)),
        Event::ToolDispatched { call } => format!(
            "call {} round {} {} {}",
            call.call_id,
            call.round,
            call.tool_name,
            canonical_json(&serde_json::Value::Object(call.arguments.clone()))
        ),
        Event::ToolReturned { result } => {
            let mut s = format!("call {} {} {}ms", result.call_id, result.status.as_str(), result.latency_ms);
            if result.hallucinated_tool {
                s.push_str(" hallucinated");
            }
            if let Some(d) = &result.diagnostic {
                let _ = write!(s, ": {}", clip(d, 80));
            }
            s
        }
        Event::EvidenceAppended { item } => clip(&item.render(), 100),
        Event::ChainExtracted { chain } => {
            let ids: Vec<String> = chain.ids().map(|i| format!("E{i}")).collect();
            format!("[{}] grouped={}", ids.join(", "), chain.grouped)
        }
        Event::ReportEmitted { report } => format!("{} findings", report.findings.len()),
        Event::Aborted { status, stage: s, reason } => format!("{} in {}: {reason}", status.as_str(), stage(s)),
    }
}

fn stage(stage: &Stage) -> &'static str {
    match stage {
        Stage::Planning => "planning",
        Stage::Acting => "acting",
        Stage::Extraction => "extraction",
        Stage::Reporting => "reporting",
    }
}

pub fn render_event(e: &LoggedEvent) -> String {
    format!("{:>4} {:>8}ms {:<18} {}", e.seq, e.ts, e.event.name(), detail(&e.event))
}

/// One line per event.
pub fn render_full(log: &TrajectoryLog) -> String {
    let mut out = format!("study {}\n", log.study_id);
    for e in log.events() {
        out.push_str(&render_event(e));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use evi_core::trajectory::RunStatus;

    #[test]
    fn marks_follow_named_pathologies() {
        let labels = LabelSet::chexpert();
        let f = |t: &str| Finding { text: t.into(), evidence_ids: vec![1] };
        let gt = "Mild cardiomegaly. No effusion.";
        assert_eq!(mark(&f("Cardiomegaly is present [E1]."), gt, &labels), Mark::Consistent);
        assert_eq!(mark(&f("Left lower lobe atelectasis [E2]."), gt, &labels), Mark::Inconsistent);
        assert_eq!(mark(&f("Lines and tubes unchanged."), gt, &labels), Mark::Unknown);
        assert_eq!(Mark::Consistent.render(false), "[+]");
        assert!(Mark::Inconsistent.render(true).starts_with("\x1b[31m"));
    }

    #[test]
    fn full_view_has_one_line_per_event() {
        let mut log = TrajectoryLog::new("s");
        log.push(Event::PlannerRawEmission { stage: Stage::Planning, round: 0, text: "a\nb".into() }, 0);
        log.push(Event::Aborted { status: RunStatus::Failed, stage: Stage::Planning, reason: "r".into() }, 3);
        let text = render_full(&log);
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("planning round 0: a⏎b"));
        let view = View { ground_truth: None, labels: LabelSet::chexpert(), colour: false };
        assert_eq!(render_evidence(&log, &view), "no report: run ended failed\n");
    }
}
