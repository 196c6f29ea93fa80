//! Durable label store backing both the HTTP service and headless imports.
//!
//! Every accepted label is appended to `labels.log` and synced before it is
//! acknowledged. Opening the store replays the log; a torn final line (a
//! crash mid-append) is dropped, any other malformed line refuses the open.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{force_resolve, resolve, write_decisions, AnnotatorLabel, Outcome, ResolvedDecision, Verdict};
use crate::error::{Error, Result};
use crate::pairing::{AnnotationTask, TaskContext, TaskStatus};
use crate::records::{read_lines, to_lines, write_atomic, Warning};

pub const LOG_FILE: &str = "labels.log";
pub const AUDIT_FILE: &str = "labels.audit";
pub const DECISIONS_FILE: &str = "decisions.jsonl";
pub const TASKS_EXT: &str = "tasks";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LogRecord {
    Label(AnnotatorLabel),
    Decision(ResolvedDecision),
    Finalize { timestamp: u64 },
}

/// Task as shown to one annotator. Other annotators' verdicts are never
/// included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_id: String,
    pub sentence_id: String,
    pub function_id: String,
    pub sentence_text: String,
    pub function_body: String,
    pub context: TaskContext,
    pub status: TaskStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub my_verdict: Option<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub open: usize,
    pub complete: usize,
    pub discarded: usize,
    pub labels: usize,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub label: AnnotatorLabel,
    pub status: TaskStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
}

/// A label record for headless import. The task may be named directly or
/// through its sentence (there is one task per sentence).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelImport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentence_id: Option<String>,
    pub annotator_id: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum SubmitError {
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("task {0} is already finalized")]
    Finalized(String),
    #[error("invalid label: {0}")]
    Invalid(String),
    #[error(transparent)]
    Store(#[from] Error),
}

impl From<SubmitError> for Error {
    fn from(e: SubmitError) -> Self {
        match e {
            SubmitError::Store(e) => e,
            other => Error::validation(other.to_string()),
        }
    }
}

pub struct AnnotationStore {
    dir: PathBuf,
    required: usize,
    tasks: BTreeMap<String, AnnotationTask>,
    by_sentence: BTreeMap<String, String>,
    labels: BTreeMap<String, BTreeMap<String, AnnotatorLabel>>,
    decisions: BTreeMap<String, ResolvedDecision>,
    superseded: Vec<AnnotatorLabel>,
    frozen: bool,
    log: File,
}

pub fn now_millis() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl AnnotationStore {
    /// Loads every `*.tasks` file under `dir` and replays the label log.
    pub fn open(dir: &Path, required: usize) -> Result<(Self, Vec<Warning>)> {
        if required == 0 {
            return Err(Error::validation("required_annotators must be at least 1"));
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tasks = BTreeMap::new();
        let mut task_files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == TASKS_EXT))
            .collect();
        task_files.sort();
        for p in &task_files {
            for t in read_lines::<AnnotationTask>(p)? {
                tasks.insert(t.task_id.clone(), t);
            }
        }
        let by_sentence = tasks
            .values()
            .map(|t| (t.sentence_id.clone(), t.task_id.clone()))
            .collect();

        let log_path = dir.join(LOG_FILE);
        let (records, warnings) = read_log(&log_path)?;
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        let mut store = AnnotationStore {
            dir: dir.to_path_buf(),
            required,
            tasks,
            by_sentence,
            labels: BTreeMap::new(),
            decisions: BTreeMap::new(),
            superseded: Vec::new(),
            frozen: false,
            log,
        };
        for (line, rec) in records {
            store.apply(rec).map_err(|e| Error::Record {
                path: log_path.clone(),
                line,
                detail: e.to_string(),
            })?;
        }
        Ok((store, warnings))
    }

    fn apply(&mut self, rec: LogRecord) -> std::result::Result<(), SubmitError> {
        match rec {
            LogRecord::Label(l) => self.apply_label(l).map(|_| ()),
            LogRecord::Decision(d) => self.apply_decision(d),
            LogRecord::Finalize { .. } => {
                self.force_all();
                self.frozen = true;
                Ok(())
            }
        }
    }

    fn check_open(&self, task_id: &str) -> std::result::Result<(), SubmitError> {
        if !self.tasks.contains_key(task_id) {
            return Err(SubmitError::UnknownTask(task_id.to_string()));
        }
        if self.frozen || self.decisions.contains_key(task_id) {
            return Err(SubmitError::Finalized(task_id.to_string()));
        }
        Ok(())
    }

    fn apply_label(&mut self, l: AnnotatorLabel) -> std::result::Result<SubmitOutcome, SubmitError> {
        self.check_open(&l.task_id)?;
        let entry = self.labels.entry(l.task_id.clone()).or_default();
        if let Some(old) = entry.insert(l.annotator_id.clone(), l.clone()) {
            self.superseded.push(old);
        }
        let mut outcome = None;
        if entry.len() >= self.required {
            let labels: Vec<AnnotatorLabel> = entry.values().cloned().collect();
            let d = resolve(&l.task_id, &labels, self.required)?;
            outcome = Some(d.outcome);
            self.decisions.insert(l.task_id.clone(), d);
        }
        Ok(SubmitOutcome {
            status: self.status(&l.task_id),
            label: l,
            outcome,
        })
    }

    fn apply_decision(&mut self, d: ResolvedDecision) -> std::result::Result<(), SubmitError> {
        if !self.tasks.contains_key(&d.task_id) {
            return Err(SubmitError::UnknownTask(d.task_id.clone()));
        }
        if let Some(existing) = self.decisions.get(&d.task_id) {
            if existing == &d {
                return Ok(());
            }
            return Err(SubmitError::Finalized(d.task_id.clone()));
        }
        let per: BTreeMap<String, AnnotatorLabel> = d
            .labels
            .iter()
            .map(|l| (l.annotator_id.clone(), l.clone()))
            .collect();
        self.labels.insert(d.task_id.clone(), per);
        self.decisions.insert(d.task_id.clone(), d);
        Ok(())
    }

    fn force_all(&mut self) {
        let open: Vec<String> = self
            .tasks
            .keys()
            .filter(|t| !self.decisions.contains_key(*t))
            .cloned()
            .collect();
        for t in open {
            let labels: Vec<AnnotatorLabel> = self
                .labels
                .get(&t)
                .map(|m| m.values().cloned().collect())
                .unwrap_or_default();
            let d = force_resolve(&t, &labels, self.required);
            self.decisions.insert(t, d);
        }
    }

    fn append(&mut self, recs: &[LogRecord]) -> Result<()> {
        let path = self.dir.join(LOG_FILE);
        let text = to_lines(recs)?;
        self.log
            .write_all(text.as_bytes())
            .and_then(|_| self.log.sync_data())
            .map_err(|e| Error::io(&path, e))
    }

    pub fn required_annotators(&self) -> usize {
        self.required
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn task(&self, task_id: &str) -> Option<&AnnotationTask> {
        self.tasks.get(task_id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &AnnotationTask> {
        self.tasks.values()
    }

    pub fn status(&self, task_id: &str) -> TaskStatus {
        match self.decisions.get(task_id).map(|d| d.outcome) {
            Some(Outcome::Positive) => TaskStatus::Complete,
            Some(Outcome::Discarded) => TaskStatus::Discarded,
            None => TaskStatus::Open,
        }
    }

    pub fn view(&self, task_id: &str, annotator: Option<&str>) -> Option<TaskView> {
        let t = self.tasks.get(task_id)?;
        let my_verdict = annotator.and_then(|a| {
            self.labels
                .get(task_id)
                .and_then(|m| m.get(a))
                .map(|l| l.verdict)
        });
        Some(TaskView {
            task_id: t.task_id.clone(),
            sentence_id: t.sentence_id.clone(),
            function_id: t.function_id.clone(),
            sentence_text: t.sentence_text.clone(),
            function_body: t.function_body.clone(),
            context: t.context.clone(),
            status: self.status(task_id),
            my_verdict,
            outcome: self.decisions.get(task_id).map(|d| d.outcome),
        })
    }

    /// Tasks in task-id order, optionally filtered by live status.
    pub fn list(&self, status: Option<TaskStatus>, annotator: Option<&str>) -> Vec<TaskView> {
        self.tasks
            .keys()
            .filter(|t| status.is_none_or(|s| self.status(t) == s))
            .filter_map(|t| self.view(t, annotator))
            .collect()
    }

    pub fn progress(&self) -> Progress {
        let mut p = Progress {
            total: self.tasks.len(),
            labels: self.labels.values().map(|m| m.len()).sum(),
            frozen: self.frozen,
            ..Default::default()
        };
        for t in self.tasks.keys() {
            match self.status(t) {
                TaskStatus::Open => p.open += 1,
                TaskStatus::Complete => p.complete += 1,
                TaskStatus::Discarded => p.discarded += 1,
            }
        }
        p
    }

    /// Accepts one label; it is durable when this returns `Ok`.
    pub fn submit(
        &mut self,
        task_id: &str,
        annotator_id: &str,
        verdict: Verdict,
        timestamp: u64,
    ) -> std::result::Result<SubmitOutcome, SubmitError> {
        if annotator_id.trim().is_empty() {
            return Err(SubmitError::Invalid("annotator_id is empty".into()));
        }
        self.check_open(task_id)?;
        let label = AnnotatorLabel {
            task_id: task_id.to_string(),
            annotator_id: annotator_id.to_string(),
            verdict,
            timestamp,
        };
        self.append(&[LogRecord::Label(label.clone())])?;
        self.apply_label(label)
    }

    /// Resolves a task from its current labels.
    pub fn resolve_task(&self, task_id: &str) -> Result<ResolvedDecision> {
        if let Some(d) = self.decisions.get(task_id) {
            return Ok(d.clone());
        }
        if !self.tasks.contains_key(task_id) {
            return Err(Error::validation(format!("unknown task {task_id}")));
        }
        let labels: Vec<AnnotatorLabel> = self
            .labels
            .get(task_id)
            .map(|m| m.values().cloned().collect())
            .unwrap_or_default();
        resolve(task_id, &labels, self.required)
    }

    /// Resolved decisions in task-id order.
    pub fn decisions(&self) -> Vec<ResolvedDecision> {
        self.decisions.values().cloned().collect()
    }

    pub fn decisions_path(&self) -> PathBuf {
        self.dir.join(DECISIONS_FILE)
    }

    /// Discards still-incomplete tasks, freezes the store and writes the
    /// decisions file.
    pub fn finalize(&mut self) -> Result<PathBuf> {
        if !self.frozen {
            self.append(&[LogRecord::Finalize {
                timestamp: now_millis(),
            }])?;
            self.force_all();
            self.frozen = true;
        }
        let path = self.decisions_path();
        write_decisions(&path, &self.decisions())?;
        Ok(path)
    }

    /// Applies decisions produced elsewhere.
    pub fn import_decisions(&mut self, decisions: &[ResolvedDecision]) -> Result<usize> {
        let mut recs = Vec::new();
        for d in decisions {
            if !self.tasks.contains_key(&d.task_id) {
                return Err(Error::validation(format!("decision for unknown task {}", d.task_id)));
            }
            if let Some(existing) = self.decisions.get(&d.task_id) {
                if existing != d {
                    return Err(Error::validation(format!(
                        "task {} already has a different decision",
                        d.task_id
                    )));
                }
                continue;
            }
            recs.push(LogRecord::Decision(d.clone()));
        }
        self.append(&recs)?;
        let n = recs.len();
        for r in recs {
            self.apply(r)?;
        }
        Ok(n)
    }

    /// Submits a batch of labels with a single sync.
    pub fn import_labels(&mut self, labels: &[LabelImport]) -> Result<usize> {
        let mut accepted = Vec::with_capacity(labels.len());
        let mut staged: BTreeMap<String, usize> = BTreeMap::new();
        for (i, li) in labels.iter().enumerate() {
            let task_id = match (&li.task_id, &li.sentence_id) {
                (Some(t), _) => t.clone(),
                (None, Some(s)) => self.by_sentence.get(s).cloned().ok_or_else(|| {
                    Error::validation(format!("label {}: no task for sentence {s}", i + 1))
                })?,
                (None, None) => {
                    return Err(Error::validation(format!(
                        "label {}: needs task_id or sentence_id",
                        i + 1
                    )))
                }
            };
            self.check_open(&task_id)
                .map_err(|e| Error::validation(format!("label {}: {e}", i + 1)))?;
            *staged.entry(task_id.clone()).or_default() += 1;
            accepted.push(AnnotatorLabel {
                task_id,
                annotator_id: li.annotator_id.clone(),
                verdict: li.verdict,
                timestamp: li.timestamp.unwrap_or_else(now_millis),
            });
        }
        // Validate the whole batch against a scratch copy first so a bad
        // record in the middle leaves the store untouched.
        {
            let mut shadow: BTreeMap<String, BTreeMap<String, ()>> = self
                .labels
                .iter()
                .filter(|(t, _)| staged.contains_key(*t))
                .map(|(t, m)| (t.clone(), m.keys().map(|k| (k.clone(), ())).collect()))
                .collect();
            for (i, l) in accepted.iter().enumerate() {
                let m = shadow.entry(l.task_id.clone()).or_default();
                if m.len() >= self.required && !m.contains_key(&l.annotator_id) {
                    return Err(Error::validation(format!(
                        "label {}: task {} already has {} labels",
                        i + 1,
                        l.task_id,
                        self.required
                    )));
                }
                m.insert(l.annotator_id.clone(), ());
                if m.len() >= self.required {
                    // Task resolves at this point; later labels for it are rejected.
                    m.insert(String::new(), ());
                }
            }
        }
        let recs: Vec<LogRecord> = accepted.iter().cloned().map(LogRecord::Label).collect();
        self.append(&recs)?;
        for l in accepted.iter().cloned() {
            self.apply_label(l)?;
        }
        Ok(accepted.len())
    }

    /// Rewrites the log with only the effective state; superseded labels are
    /// appended to the audit file first.
    pub fn compact(&mut self) -> Result<()> {
        if !self.superseded.is_empty() {
            let audit = self.dir.join(AUDIT_FILE);
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&audit)
                .map_err(|e| Error::io(&audit, e))?;
            f.write_all(to_lines(&self.superseded)?.as_bytes())
                .and_then(|_| f.sync_data())
                .map_err(|e| Error::io(&audit, e))?;
            self.superseded.clear();
        }
        let mut recs = Vec::new();
        for (t, per) in &self.labels {
            match self.decisions.get(t) {
                Some(d) if d.labels.len() == per.len() && !self.frozen => {
                    recs.extend(per.values().cloned().map(LogRecord::Label))
                }
                Some(d) => recs.push(LogRecord::Decision(d.clone())),
                None => recs.extend(per.values().cloned().map(LogRecord::Label)),
            }
        }
        if self.frozen {
            recs.push(LogRecord::Finalize {
                timestamp: now_millis(),
            });
        }
        let path = self.dir.join(LOG_FILE);
        write_atomic(&path, to_lines(&recs)?.as_bytes())?;
        self.log = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        let path = self.dir.join(LOG_FILE);
        self.log.sync_all().map_err(|e| Error::io(&path, e))
    }
}

fn read_log(path: &Path) -> Result<(Vec<(usize, LogRecord)>, Vec<Warning>)> {
    let mut warnings = Vec::new();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), warnings)),
        Err(e) => return Err(Error::io(path, e)),
    };
    let text = String::from_utf8(bytes).map_err(|_| Error::Record {
        path: path.to_path_buf(),
        line: 0,
        detail: "label log is not UTF-8".into(),
    })?;
    let complete_len = text.rfind('\n').map(|i| i + 1).unwrap_or(0);
    let (complete, tail) = text.split_at(complete_len);
    let mut out = Vec::new();
    for (i, line) in complete.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogRecord = serde_json::from_str(line).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            detail: format!("corrupted label log: {e}"),
        })?;
        out.push((i + 1, rec));
    }
    if !tail.trim().is_empty() {
        let line = complete.lines().count() + 1;
        match serde_json::from_str::<LogRecord>(tail) {
            Ok(rec) => {
                let mut f = OpenOptions::new()
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?;
                f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
                out.push((line, rec));
            }
            Err(_) => {
                let f = OpenOptions::new()
                    .write(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?;
                f.set_len(complete_len as u64).map_err(|e| Error::io(path, e))?;
                warnings.push(Warning::new(
                    "annotations",
                    path.display().to_string(),
                    format!("dropped torn record at line {line}"),
                ));
            }
        }
    }
    Ok((out, warnings))
}
