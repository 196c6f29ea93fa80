//! Corpus stages: paper and code ingestion, embedding, retrieval and task
//! generation.

use std::collections::BTreeMap;

use super::{write_warnings, Pipeline, StageReport};
use crate::code_ingest::{compute_stats, extract_all, scan_repository, FunctionUnit, ProjectStats};
use crate::embedding::{
    function_text, read_vectors, write_vectors, EmbedItem, Embedded, EmbeddingProvider, FileProvider,
    LexicalModel, ProviderKind, RemoteProvider,
};
use crate::error::{Error, Result};
use crate::pairing::{generate_annotation_tasks, retrieve_all, FunctionIndex};
use crate::paper_ingest::{convert_tei, extract_candidate_sentences, load_paper};
use crate::records::{digest_of, read_lines, write_json, write_lines, Warning};
use crate::Embedding;

impl Pipeline {
    pub fn ingest_paper(&mut self, only: Option<&str>) -> Result<StageReport> {
        let mut report = StageReport::new("ingest-paper");
        let cfg_digest = digest_of(&self.config.paper);
        let mut total = 0usize;
        for p in self.projects(only)? {
            let paper = self.ws.resolve(&p.paper_path);
            let out = self.sentences_path(&p.project_id);
            let inputs = digest_of(&(super::file_digest(&paper)?, &cfg_digest, &p.project_id));
            if self.fresh("ingest-paper", &out, &inputs) {
                report.skipped += 1;
                continue;
            }
            let is_xml = paper
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("xml") || e.eq_ignore_ascii_case("tei"));
            let doc = if is_xml { convert_tei(&paper)? } else { load_paper(&paper)? };
            let sentences = extract_candidate_sentences(&p.project_id, &doc, &self.config.paper)?;
            if sentences.is_empty() {
                report.warnings.push(Warning::new(
                    "ingest-paper",
                    &p.project_id,
                    "no candidate sentences extracted",
                ));
            }
            total += sentences.len();
            write_lines(&out, &sentences)?;
            self.stamp("ingest-paper", &out, &inputs)?;
            report.outputs.push(out);
        }
        report.summary = format!("{total} sentences written, {} projects unchanged", report.skipped);
        Ok(report)
    }

    pub fn ingest_code(&mut self, only: Option<&str>) -> Result<StageReport> {
        let mut report = StageReport::new("ingest-code");
        let cfg = self.config.code.clone();
        let mut total = 0usize;
        for p in self.projects(only)? {
            let repo = self.ws.resolve(&p.repo_path);
            let scan = scan_repository(&repo, &cfg)?;
            let file_digests: Vec<(String, String)> = scan
                .files
                .iter()
                .map(|f| (f.file_path.clone(), crate::records::sha256_hex(f.content.as_bytes())))
                .collect();
            let out = self.functions_path(&p.project_id);
            let inputs = digest_of(&(&file_digests, &cfg, &p.project_id));
            if self.fresh("ingest-code", &out, &inputs) && p.stats.is_some() {
                report.skipped += 1;
                continue;
            }
            let mut warnings = scan.warnings;
            let extraction = extract_all(&p.project_id, &scan.files, &cfg);
            warnings.extend(extraction.warnings);
            let mut stats = compute_stats(&scan.files, &extraction.units);
            let old = p.stats.unwrap_or_default();
            stats.stars = old.stars;
            stats.citations = old.citations;
            total += extraction.units.len();
            write_lines(&out, &extraction.units)?;
            write_warnings(&self.ws.corpus().join(format!("{}.code.warnings", p.project_id)), &warnings)?;
            self.stamp("ingest-code", &out, &inputs)?;
            if let Some(m) = self.manifest.project_mut(&p.project_id) {
                m.stats = Some(stats);
            }
            report.warnings.extend(warnings);
            report.outputs.push(out);
        }
        self.save_manifest()?;
        report.summary = format!("{total} functions written, {} projects unchanged", report.skipped);
        Ok(report)
    }

    /// Recomputes statistics from ingested functions and the repository.
    pub fn project_stats(&mut self) -> Result<Vec<(String, ProjectStats)>> {
        let mut out = Vec::new();
        for p in self.projects(None)? {
            let units = self.load_functions(&p.project_id)?;
            let scan = scan_repository(&self.ws.resolve(&p.repo_path), &self.config.code)?;
            let mut stats = compute_stats(&scan.files, &units);
            let old = p.stats.unwrap_or_default();
            stats.stars = old.stars;
            stats.citations = old.citations;
            if let Some(m) = self.manifest.project_mut(&p.project_id) {
                m.stats = Some(stats);
            }
            out.push((p.project_id.clone(), stats));
        }
        self.save_manifest()?;
        Ok(out)
    }

    fn embed_with(&self, items: &[EmbedItem], fallback_corpus: &[&str]) -> Result<(Embedded<f32>, Option<LexicalModel>)> {
        let cfg = &self.config.embedding;
        match cfg.kind {
            ProviderKind::Lexical => {
                let hash = (cfg.hash_dim > 0).then_some(cfg.hash_dim);
                let model = LexicalModel::fit(fallback_corpus, hash)?;
                let e = EmbeddingProvider::<f32>::embed(&model, items)?;
                Ok((e, Some(model)))
            }
            ProviderKind::File => {
                let paths: Vec<_> = cfg.vector_files.iter().map(|p| self.ws.resolve(p)).collect();
                let provider = FileProvider::load(&paths)?;
                Ok((EmbeddingProvider::<f32>::embed(&provider, items)?, None))
            }
            ProviderKind::Remote => {
                let provider = RemoteProvider::new(cfg)?;
                Ok((EmbeddingProvider::<f32>::embed(&provider, items)?, None))
            }
        }
    }

    /// Embeds every sentence and pool function of every project into one
    /// shared space.
    pub fn embed(&mut self) -> Result<StageReport> {
        let mut report = StageReport::new("embed");
        let projects = self.projects(None)?;
        let mut inputs_files = Vec::new();
        for p in &projects {
            inputs_files.push(self.sentences_path(&p.project_id));
            inputs_files.push(self.functions_path(&p.project_id));
        }
        for f in &inputs_files {
            self.require(f, "corpus records", "run `concord ingest-paper` and `concord ingest-code`")?;
        }
        let inputs = self.digest_files(&inputs_files, &digest_of(&(&self.config.embedding, &self.config.code.exclude_trivial)))?;
        let s_out = self.sentence_vectors_path();
        let f_out = self.function_vectors_path();
        if self.fresh("embed", &s_out, &inputs) && self.fresh("embed", &f_out, &inputs) {
            report.skipped = 1;
            report.summary = "embeddings unchanged".into();
            return Ok(report);
        }
        let mut s_items = Vec::new();
        let mut f_items = Vec::new();
        for p in &projects {
            for s in self.load_sentences(&p.project_id)? {
                s_items.push(EmbedItem::new(s.sentence_id, s.text));
            }
            for f in self.load_functions(&p.project_id)? {
                if self.in_pool(&f) {
                    f_items.push(EmbedItem::new(f.function_id.clone(), function_text(&f)));
                }
            }
        }
        if s_items.is_empty() || f_items.is_empty() {
            return Err(Error::validation("nothing to embed: corpus has no sentences or no pool functions"));
        }
        let all: Vec<EmbedItem> = s_items.iter().chain(f_items.iter()).cloned().collect();
        let corpus: Vec<&str> = all.iter().map(|i| i.text.as_str()).collect();
        let (embedded, model) = self.embed_with(&all, &corpus)?;
        let dim = embedded.vectors.first().map(|v| v.dim()).unwrap_or(0);
        let n_sent = s_items.len();
        let sentence_ids: std::collections::HashSet<&str> = s_items.iter().map(|i| i.unit_id.as_str()).collect();
        let (sv, fv): (Vec<Embedding>, Vec<Embedding>) = embedded
            .vectors
            .into_iter()
            .partition(|v| sentence_ids.contains(v.unit_id.as_str()));
        for id in &embedded.unembeddable {
            report.warnings.push(Warning::new("embed", id, "text has no embeddable tokens"));
        }
        write_vectors(&s_out, dim, &sv)?;
        write_vectors(&f_out, dim, &fv)?;
        if let Some(m) = model {
            write_json(&self.ws.embeddings().join("lexical.json"), &m)?;
        }
        write_warnings(&self.ws.embeddings().join("embed.warnings"), &report.warnings)?;
        self.stamp("embed", &s_out, &inputs)?;
        self.stamp("embed", &f_out, &inputs)?;
        report.outputs = vec![s_out, f_out];
        report.summary = format!(
            "{} of {n_sent} sentences and {} of {} functions embedded (dim {dim})",
            sv.len(),
            fv.len(),
            f_items.len()
        );
        Ok(report)
    }

    pub fn load_vectors(&self) -> Result<(BTreeMap<String, Embedding>, BTreeMap<String, Embedding>)> {
        let sp = self.sentence_vectors_path();
        let fp = self.function_vectors_path();
        self.require(&sp, "sentence embeddings", "run `concord embed`")?;
        self.require(&fp, "function embeddings", "run `concord embed`")?;
        let (_, s) = read_vectors::<f32>(&sp)?;
        let (_, f) = read_vectors::<f32>(&fp)?;
        let to_map = |v: Vec<Embedding>| v.into_iter().map(|e| (e.unit_id.clone(), e)).collect();
        Ok((to_map(s), to_map(f)))
    }

    /// Top-k retrieval within each project's own function pool.
    pub fn retrieve(&mut self, only: Option<&str>) -> Result<StageReport> {
        let mut report = StageReport::new("retrieve");
        let vec_inputs = self.digest_files(
            &[self.sentence_vectors_path(), self.function_vectors_path()],
            &digest_of(&self.config.retrieval),
        );
        let vec_inputs = match vec_inputs {
            Ok(d) => d,
            Err(_) => {
                return Err(Error::missing("embeddings", "run `concord embed`"));
            }
        };
        let mut loaded: Option<(BTreeMap<String, Embedding>, BTreeMap<String, Embedding>)> = None;
        let k = self.config.retrieval.k;
        let mut total = 0usize;
        for p in self.projects(only)? {
            let out = self.candidates_path(&p.project_id);
            let inputs = digest_of(&(&vec_inputs, &p.project_id));
            if self.fresh("retrieve", &out, &inputs) {
                report.skipped += 1;
                continue;
            }
            if loaded.is_none() {
                loaded = Some(self.load_vectors()?);
            }
            let (svecs, fvecs) = loaded.as_ref().expect("loaded above");
            let sentences = self.load_sentences(&p.project_id)?;
            let functions = self.load_functions(&p.project_id)?;
            let pool: Vec<Embedding> = functions
                .iter()
                .filter(|f| self.in_pool(f))
                .filter_map(|f| fvecs.get(&f.function_id).cloned())
                .collect();
            let queries: Vec<Embedding> = sentences
                .iter()
                .filter_map(|s| {
                    let v = svecs.get(&s.sentence_id).cloned();
                    if v.is_none() {
                        report.warnings.push(Warning::new("retrieve", &s.sentence_id, "no embedding; skipped"));
                    }
                    v
                })
                .collect();
            let ranked = if pool.is_empty() {
                report.warnings.push(Warning::new("retrieve", &p.project_id, "no pool functions"));
                Vec::new()
            } else {
                let index = FunctionIndex::new(pool)?;
                if index.len() < k {
                    report.warnings.push(Warning::new(
                        "retrieve",
                        &p.project_id,
                        format!("pool has {} functions, fewer than k = {k}", index.len()),
                    ));
                }
                retrieve_all(&queries, &index, k)?
            };
            total += ranked.len();
            write_lines(&out, &ranked)?;
            self.stamp("retrieve", &out, &inputs)?;
            report.outputs.push(out);
        }
        report.summary = format!("{total} ranked lists written, {} projects unchanged", report.skipped);
        Ok(report)
    }

    /// One annotation task per sentence, pairing it with its top-1 candidate.
    pub fn generate_tasks(&mut self, only: Option<&str>) -> Result<StageReport> {
        let mut report = StageReport::new("tasks");
        let labels = self.ws.annotations().join(crate::annotation::LOG_FILE);
        let labelled = std::fs::metadata(&labels).map(|m| m.len() > 0).unwrap_or(false);
        let mut total = 0usize;
        for p in self.projects(only)? {
            let sentences = self.load_sentences(&p.project_id)?;
            let functions: Vec<FunctionUnit> = self.load_functions(&p.project_id)?;
            let ranked = self.load_candidates(&p.project_id)?;
            let (tasks, warnings) = generate_annotation_tasks(&p.project_id, &sentences, &functions, &ranked);
            let out = self.tasks_path(&p.project_id);
            if out.exists() {
                let existing: Vec<crate::pairing::AnnotationTask> = read_lines(&out)?;
                if existing == tasks {
                    report.skipped += 1;
                    continue;
                }
                if labelled {
                    return Err(Error::validation(format!(
                        "tasks for {} changed but labels already exist in {}; move the label log aside to regenerate",
                        p.project_id,
                        labels.display()
                    )));
                }
            }
            total += tasks.len();
            write_lines(&out, &tasks)?;
            report.warnings.extend(warnings);
            report.outputs.push(out);
        }
        report.summary = format!("{total} tasks written, {} projects unchanged", report.skipped);
        Ok(report)
    }
}
