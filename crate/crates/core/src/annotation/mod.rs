//! Expert labels and unanimity resolution.
//!
//! A task becomes a positive sample only when every required annotator has
//! labelled it and all of them said `consistent`; anything else is
//! discarded. Resolution depends only on the set of labels, never on their
//! order or timing.

mod store;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{parse_lines, to_lines, write_atomic};

pub use store::{
    now_millis, AnnotationStore, LabelImport, Progress, SubmitError, SubmitOutcome, TaskView, AUDIT_FILE,
    DECISIONS_FILE, LOG_FILE, TASKS_EXT,
};

pub const DEFAULT_REQUIRED_ANNOTATORS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Consistent,
    Inconsistent,
    Unsure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorLabel {
    pub task_id: String,
    pub annotator_id: String,
    pub verdict: Verdict,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Positive,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedDecision {
    pub task_id: String,
    pub outcome: Outcome,
    /// Sorted by annotator id.
    pub labels: Vec<AnnotatorLabel>,
    pub required_annotators: usize,
}

/// The unanimity rule on a label set.
pub fn unanimity(labels: &[AnnotatorLabel], required: usize) -> Outcome {
    let mut annotators: Vec<&str> = labels.iter().map(|l| l.annotator_id.as_str()).collect();
    annotators.sort_unstable();
    annotators.dedup();
    if required > 0
        && annotators.len() >= required
        && labels.iter().all(|l| l.verdict == Verdict::Consistent)
    {
        Outcome::Positive
    } else {
        Outcome::Discarded
    }
}

fn sorted(labels: &[AnnotatorLabel]) -> Vec<AnnotatorLabel> {
    let mut v = labels.to_vec();
    v.sort_by(|a, b| a.annotator_id.cmp(&b.annotator_id).then(a.timestamp.cmp(&b.timestamp)));
    v
}

/// Resolves a task whose labels are complete.
pub fn resolve(task_id: &str, labels: &[AnnotatorLabel], required: usize) -> Result<ResolvedDecision> {
    let mut annotators: Vec<&str> = labels.iter().map(|l| l.annotator_id.as_str()).collect();
    annotators.sort_unstable();
    annotators.dedup();
    if annotators.len() < required {
        return Err(Error::validation(format!(
            "task {task_id} has {} of {required} required labels",
            annotators.len()
        )));
    }
    Ok(force_resolve(task_id, labels, required))
}

/// Resolves regardless of completeness; incomplete tasks are discarded.
pub fn force_resolve(task_id: &str, labels: &[AnnotatorLabel], required: usize) -> ResolvedDecision {
    ResolvedDecision {
        task_id: task_id.to_string(),
        outcome: unanimity(labels, required),
        labels: sorted(labels),
        required_annotators: required,
    }
}

/// Serializes decisions sorted by task id, one per line.
pub fn decisions_to_string(decisions: &[ResolvedDecision]) -> Result<String> {
    let mut d = decisions.to_vec();
    d.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    for x in &mut d {
        x.labels = sorted(&x.labels);
    }
    to_lines(&d)
}

pub fn write_decisions(path: &Path, decisions: &[ResolvedDecision]) -> Result<()> {
    write_atomic(path, decisions_to_string(decisions)?.as_bytes())
}

/// Parses a decisions file, rejecting malformed records and records whose
/// outcome disagrees with their labels.
pub fn parse_decisions(path: &Path, text: &str) -> Result<Vec<ResolvedDecision>> {
    let decisions: Vec<ResolvedDecision> = parse_lines(path, text)?;
    let mut line_of = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, _)| i + 1);
    for d in &decisions {
        let line = line_of.next().unwrap_or(0);
        let bad = |detail: String| Error::Record {
            path: path.to_path_buf(),
            line,
            detail,
        };
        if d.labels.iter().any(|l| l.task_id != d.task_id) {
            return Err(bad("label task_id differs from decision task_id".into()));
        }
        let expected = unanimity(&d.labels, d.required_annotators);
        if expected != d.outcome {
            return Err(bad(format!(
                "outcome {:?} contradicts labels (expected {:?})",
                d.outcome, expected
            )));
        }
    }
    Ok(decisions)
}

pub fn read_decisions(path: &Path) -> Result<Vec<ResolvedDecision>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_decisions(path, &text)
}
