//! Dataset stages: project split, negative sampling, assembly and joint
//! sequence export.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{file_digest, write_warnings, Pipeline, StageReport};
use crate::annotation::Outcome;
use crate::dataset::{
    assemble_groups, check_integrity, count_table, export_joint_sequences, render_count_table,
    sample_groups, split_by_project, Assembled, Catalog, DatasetManifest, Example, FunctionInfo,
    PositivePair, SampledGroup, Split, SplitAssignment, SubtokenCounter, REPRESENTATION_NOTE,
};
use crate::error::{Error, Result};
use crate::pairing::RankedCandidates;
use crate::records::{read_json, read_lines, stable_hash64, write_atomic, write_json, write_lines};
use crate::workspace::{validate_slug, Workspace};

pub const SPLIT_FILE: &str = "split.json";
pub const GROUPS_FILE: &str = "sampled.groups";

pub fn dataset_dir(ws: &Workspace, name: &str) -> Result<PathBuf> {
    validate_slug(name)?;
    Ok(ws.datasets().join(name))
}

pub fn examples_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{split}.examples"))
}

pub fn load_examples(ws: &Workspace, name: &str, split: Split) -> Result<Vec<Example>> {
    let p = examples_path(&dataset_dir(ws, name)?, split);
    if !p.exists() {
        return Err(Error::missing(
            format!("{split} examples of dataset {name}"),
            "run `concord assemble`",
        ));
    }
    read_lines(&p)
}

pub fn load_dataset_manifest(ws: &Workspace, name: &str) -> Result<DatasetManifest> {
    let p = dataset_dir(ws, name)?.join(crate::workspace::MANIFEST_FILE);
    if !p.exists() {
        return Err(Error::missing(format!("dataset {name}"), "run `concord assemble`"));
    }
    read_json(&p)
}

impl Pipeline {
    fn dataset_dir_checked(&self, name: &str) -> Result<PathBuf> {
        let dir = dataset_dir(&self.ws, name)?;
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    pub fn load_split(&self, name: &str) -> Result<SplitAssignment> {
        let p = dataset_dir(&self.ws, name)?.join(SPLIT_FILE);
        if !p.exists() {
            return Err(Error::missing(format!("split of dataset {name}"), "run `concord split`"));
        }
        read_json(&p)
    }

    pub fn split(&mut self, name: &str) -> Result<StageReport> {
        let mut report = StageReport::new("split");
        let dir = self.dataset_dir_checked(name)?;
        let ids = self.manifest.project_ids();
        let assignment = split_by_project(&ids, self.config.split.ratios, self.config.seed)?;
        let out = dir.join(SPLIT_FILE);
        if out.exists() && !self.force {
            let old: SplitAssignment = read_json(&out)?;
            if old != assignment {
                return Err(Error::validation(format!(
                    "dataset {name} already has a different split; pass --force to replace it"
                )));
            }
        }
        write_json(&out, &assignment)?;
        let [a, b, c] = assignment.counts();
        report.summary = format!("{a} train / {b} validation / {c} test projects");
        report.outputs.push(out);
        Ok(report)
    }

    /// Positives from resolved decisions, one per sentence.
    pub fn positives(&self) -> Result<Vec<PositivePair>> {
        let (store, _) = self.open_store()?;
        let mut out = Vec::new();
        for d in store.decisions() {
            if d.outcome != Outcome::Positive {
                continue;
            }
            let t = store
                .task(&d.task_id)
                .ok_or_else(|| Error::validation(format!("decision for unknown task {}", d.task_id)))?;
            out.push(PositivePair {
                sentence_id: t.sentence_id.clone(),
                function_id: t.function_id.clone(),
                project_id: t.project_id.clone(),
            });
        }
        Ok(out)
    }

    /// Pool functions of every registered project.
    pub fn catalog(&self) -> Result<Catalog> {
        let mut catalog = Catalog::new();
        for p in self.projects(None)? {
            for f in self.load_functions(&p.project_id)? {
                if self.in_pool(&f) {
                    catalog.insert(
                        f.function_id.clone(),
                        FunctionInfo {
                            project_id: f.project_id.clone(),
                            body_hash: stable_hash64(&f.normalized_body),
                        },
                    );
                }
            }
        }
        Ok(catalog)
    }

    pub fn all_candidates(&self) -> Result<BTreeMap<String, RankedCandidates>> {
        let mut out = BTreeMap::new();
        for p in self.projects(None)? {
            for r in self.load_candidates(&p.project_id)? {
                out.insert(r.sentence_id.clone(), r);
            }
        }
        Ok(out)
    }

    pub fn sample(&mut self, name: &str) -> Result<StageReport> {
        let mut report = StageReport::new("sample");
        let dir = self.dataset_dir_checked(name)?;
        let split = self.load_split(name)?;
        let positives = self.positives()?;
        if positives.is_empty() {
            return Err(Error::missing(
                "positive decisions",
                "import labels with `concord decisions-import` or annotate with `concord serve`",
            ));
        }
        let ranked = self.all_candidates()?;
        let catalog = self.catalog()?;
        let (groups, warnings) =
            sample_groups(&positives, &ranked, &catalog, &split, &self.config.sampling, self.config.seed)?;
        let out = dir.join(GROUPS_FILE);
        write_lines(&out, &groups)?;
        write_warnings(&dir.join("sample.warnings"), &warnings)?;
        let examples: usize = groups.iter().map(|g| g.examples.len()).sum();
        report.summary = format!(
            "{} positives, {} negatives sampled ({} warnings)",
            groups.len(),
            examples - groups.len(),
            warnings.len()
        );
        report.warnings = warnings;
        report.outputs.push(out);
        Ok(report)
    }

    pub fn assemble(&mut self, name: &str) -> Result<StageReport> {
        let mut report = StageReport::new("assemble");
        let dir = self.dataset_dir_checked(name)?;
        let digest = self.dataset_digest();
        let manifest_path = dir.join(crate::workspace::MANIFEST_FILE);
        if manifest_path.exists() && !self.force {
            let old: DatasetManifest = read_json(&manifest_path)?;
            if old.config_digest != digest {
                return Err(Error::validation(format!(
                    "dataset {name} was built with a different configuration; pass --force to rebuild"
                )));
            }
        }
        let split = self.load_split(name)?;
        let groups_path = dir.join(GROUPS_FILE);
        if !groups_path.exists() {
            return Err(Error::missing(format!("sampled groups of {name}"), "run `concord sample`"));
        }
        let groups: Vec<SampledGroup> = read_lines(&groups_path)?;
        let warnings = read_lines(&dir.join("sample.warnings")).unwrap_or_default();
        let mut assembled: Assembled = assemble_groups(&groups, self.config.seed);
        assembled.warnings = warnings;
        let problems = check_integrity(&assembled, &split);
        if !problems.is_empty() {
            return Err(Error::validation(format!(
                "dataset integrity check failed: {}",
                problems.join("; ")
            )));
        }
        let mut files = BTreeMap::new();
        for s in Split::ALL {
            let p = examples_path(&dir, s);
            write_lines(&p, assembled.split(s))?;
            files.insert(format!("{s}.examples"), file_digest(&p)?);
            report.outputs.push(p);
        }
        let counts = count_table(&assembled, &split);
        let table = render_count_table(&counts);
        write_atomic(&dir.join("counts.txt"), table.as_bytes())?;
        let manifest = DatasetManifest {
            name: name.to_string(),
            seed: self.config.seed,
            config_digest: digest,
            sampling: self.config.sampling.clone(),
            split,
            counts,
            files,
            warnings: assembled.warnings.len(),
            representation: REPRESENTATION_NOTE.to_string(),
        };
        write_json(&manifest_path, &manifest)?;
        report.outputs.push(manifest_path);
        report.warnings = assembled.warnings;
        report.summary = table;
        Ok(report)
    }

    /// Writes `[CLS] sentence [SEP] code [SEP]` records for every split.
    pub fn export_seq(&mut self, name: &str, budget: Option<usize>) -> Result<StageReport> {
        let mut report = StageReport::new("export-seq");
        let dir = dataset_dir(&self.ws, name)?;
        let budget = budget.unwrap_or(self.config.sequence.token_budget);
        if budget < 4 {
            return Err(Error::validation("token budget must be at least 4"));
        }
        let mut sentences = BTreeMap::new();
        let mut code = BTreeMap::new();
        for p in self.projects(None)? {
            for s in self.load_sentences(&p.project_id)? {
                sentences.insert(s.sentence_id, s.text);
            }
            for f in self.load_functions(&p.project_id)? {
                code.insert(f.function_id, f.normalized_body);
            }
        }
        let mut lines = Vec::new();
        for s in Split::ALL {
            let examples = load_examples(&self.ws, name, s)?;
            let export = export_joint_sequences(&examples, &sentences, &code, budget, &SubtokenCounter)?;
            let out = dir.join(format!("{s}.seq"));
            write_lines(&out, &export.records)?;
            write_lines(&dir.join(format!("{s}.seq.errors")), &export.errors)?;
            let truncated = export.records.iter().filter(|r| r.truncated).count();
            lines.push(format!(
                "{s}: {} sequences ({truncated} truncated), {} errors",
                export.records.len(),
                export.errors.len()
            ));
            report.outputs.push(out);
        }
        report.summary = lines.join("\n");
        Ok(report)
    }
}
