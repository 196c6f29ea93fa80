//! Headless annotation: importing labels or decisions and exporting the
//! resolved decision file.

use std::path::{Path, PathBuf};

use super::{Pipeline, StageReport};
use crate::annotation::{parse_decisions, AnnotationStore, LabelImport};
use crate::error::{Error, Result};
use crate::records::{parse_lines, Warning};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImportSource {
    /// One label per line, keyed by task or sentence id.
    Labels(PathBuf),
    /// Decisions resolved by another tool.
    Decisions(PathBuf),
}

impl Pipeline {
    pub fn open_store(&self) -> Result<(AnnotationStore, Vec<Warning>)> {
        AnnotationStore::open(&self.ws.annotations(), self.config.annotation.required_annotators)
    }

    pub fn decisions_import(&mut self, source: &ImportSource) -> Result<StageReport> {
        let mut report = StageReport::new("decisions-import");
        let (mut store, warnings) = self.open_store()?;
        report.warnings = warnings;
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
        let n = match source {
            ImportSource::Labels(p) => {
                let labels: Vec<LabelImport> = parse_lines(p, &read(p)?)?;
                store.import_labels(&labels)?
            }
            ImportSource::Decisions(p) => {
                let decisions = parse_decisions(p, &read(p)?)?;
                store.import_decisions(&decisions)?
            }
        };
        let progress = store.progress();
        report.summary = format!(
            "{n} records imported; {} open, {} positive, {} discarded",
            progress.open, progress.complete, progress.discarded
        );
        Ok(report)
    }

    /// Writes the decision file. With `finalize`, incomplete tasks are
    /// discarded and the store is frozen first; without it, only tasks
    /// resolved so far are written.
    pub fn decisions_export(&mut self, out: Option<&Path>, finalize: bool) -> Result<StageReport> {
        let mut report = StageReport::new("decisions-export");
        let (mut store, warnings) = self.open_store()?;
        report.warnings = warnings;
        let path = if finalize {
            store.finalize()?
        } else {
            let p = store.decisions_path();
            crate::annotation::write_decisions(&p, &store.decisions())?;
            p
        };
        let path = match out {
            Some(o) => {
                std::fs::copy(&path, o).map_err(|e| Error::io(o, e))?;
                o.to_path_buf()
            }
            None => path,
        };
        let progress = store.progress();
        report.summary = format!(
            "{} decisions written ({} positive, {} discarded, {} still open)",
            progress.complete + progress.discarded,
            progress.complete,
            progress.discarded,
            progress.open
        );
        report.outputs.push(path);
        Ok(report)
    }
}
