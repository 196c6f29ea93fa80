//! Pipeline stages over a workspace. Every stage reads its inputs from the
//! workspace layout, writes its artifacts back, and skips work whose inputs
//! are unchanged since the last run unless forced.

mod annotate;
mod corpus;
mod data;
mod model;

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::code_ingest::FunctionUnit;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::paper_ingest::SentenceUnit;
use crate::pairing::RankedCandidates;
use crate::records::{digest_of, read_json, read_lines, sha256_hex, write_json, write_lines, Warning};
use crate::workspace::{Project, Workspace, WorkspaceManifest};

pub use annotate::ImportSource;
pub use data::{dataset_dir, examples_path, load_dataset_manifest, load_examples, GROUPS_FILE, SPLIT_FILE};
pub use model::{ScoreSource, TrainedRun};

/// Summary of one stage invocation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub outputs: Vec<PathBuf>,
    /// Number of units whose work was skipped because inputs were unchanged.
    pub skipped: usize,
    pub warnings: Vec<Warning>,
    pub summary: String,
}

impl StageReport {
    fn new(stage: &str) -> Self {
        StageReport {
            stage: stage.to_string(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Stamp {
    stage: String,
    inputs: String,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn stamp_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".stamp");
    PathBuf::from(s)
}

pub struct Pipeline {
    pub ws: Workspace,
    pub manifest: WorkspaceManifest,
    pub config: Config,
    pub force: bool,
}

impl Pipeline {
    pub fn open(root: &Path, config: Config, force: bool) -> Result<Self> {
        let (ws, manifest) = Workspace::open(root)?;
        Ok(Pipeline {
            ws,
            manifest,
            config,
            force,
        })
    }

    pub fn save_manifest(&self) -> Result<()> {
        self.ws.save(&self.manifest)
    }

    fn projects(&self, only: Option<&str>) -> Result<Vec<Project>> {
        match only {
            Some(id) => self
                .manifest
                .project(id)
                .cloned()
                .map(|p| vec![p])
                .ok_or_else(|| Error::validation(format!("project {id} is not registered"))),
            None => {
                if self.manifest.projects.is_empty() {
                    return Err(Error::missing("registered projects", "run `concord register`"));
                }
                Ok(self.manifest.projects.clone())
            }
        }
    }

    /// True when `output` exists and was produced from `inputs`.
    fn fresh(&self, stage: &str, output: &Path, inputs: &str) -> bool {
        if self.force || !output.exists() {
            return false;
        }
        match read_json::<Stamp>(&stamp_path(output)) {
            Ok(s) => s.stage == stage && s.inputs == inputs,
            Err(_) => false,
        }
    }

    fn stamp(&self, stage: &str, output: &Path, inputs: &str) -> Result<()> {
        write_json(
            &stamp_path(output),
            &Stamp {
                stage: stage.to_string(),
                inputs: inputs.to_string(),
            },
        )
    }

    /// Appends one structured event to the workspace log.
    pub fn log_event(&self, report: &StageReport) -> Result<()> {
        let path = self.ws.root().join("pipeline.log");
        let line = serde_json::to_string(&serde_json::json!({
            "stage": report.stage,
            "outputs": report.outputs,
            "skipped": report.skipped,
            "warnings": report.warnings.len(),
            "summary": report.summary,
        }))
        .map_err(|e| Error::validation(e.to_string()))?;
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))
    }

    pub fn sentences_path(&self, pid: &str) -> PathBuf {
        self.ws.corpus().join(format!("{pid}.sentences"))
    }

    pub fn functions_path(&self, pid: &str) -> PathBuf {
        self.ws.corpus().join(format!("{pid}.functions"))
    }

    pub fn candidates_path(&self, pid: &str) -> PathBuf {
        self.ws.candidates().join(format!("{pid}.candidates"))
    }

    pub fn tasks_path(&self, pid: &str) -> PathBuf {
        self.ws.annotations().join(format!("{pid}.tasks"))
    }

    pub fn sentence_vectors_path(&self) -> PathBuf {
        self.ws.embeddings().join("sentences.vec")
    }

    pub fn function_vectors_path(&self) -> PathBuf {
        self.ws.embeddings().join("functions.vec")
    }

    fn require(&self, path: &Path, what: &str, hint: &str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::missing(format!("{what} ({})", path.display()), hint))
        }
    }

    pub fn load_sentences(&self, pid: &str) -> Result<Vec<SentenceUnit>> {
        let p = self.sentences_path(pid);
        self.require(&p, &format!("sentences of {pid}"), "run `concord ingest-paper`")?;
        read_lines(&p)
    }

    pub fn load_functions(&self, pid: &str) -> Result<Vec<FunctionUnit>> {
        let p = self.functions_path(pid);
        self.require(&p, &format!("functions of {pid}"), "run `concord ingest-code`")?;
        read_lines(&p)
    }

    pub fn load_candidates(&self, pid: &str) -> Result<Vec<RankedCandidates>> {
        let p = self.candidates_path(pid);
        self.require(&p, &format!("candidates of {pid}"), "run `concord retrieve`")?;
        read_lines(&p)
    }

    /// Functions eligible for retrieval and sampling.
    pub fn in_pool(&self, f: &FunctionUnit) -> bool {
        !(self.config.code.exclude_trivial && f.trivial)
    }

    /// Digest of the configuration sections that determine dataset content.
    pub fn dataset_digest(&self) -> String {
        let c = &self.config;
        digest_of(&(
            c.seed,
            &c.paper,
            &c.code,
            &c.embedding,
            &c.retrieval,
            &c.annotation,
            &c.sampling,
            &c.split,
        ))
    }

    fn digest_files(&self, files: &[PathBuf], extra: &str) -> Result<String> {
        let mut parts = BTreeMap::new();
        for f in files {
            let key = f.strip_prefix(self.ws.root()).unwrap_or(f);
            parts.insert(key.display().to_string(), file_digest(f)?);
        }
        Ok(digest_of(&(parts, extra)))
    }
}

fn write_warnings(path: &Path, warnings: &[Warning]) -> Result<()> {
    write_lines(path, warnings)
}
