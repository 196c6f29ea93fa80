//! Top-k candidate retrieval and annotation task generation.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::code_ingest::FunctionUnit;
use crate::embedding::{cosine, EmbeddingVector};
use crate::error::{Error, Result};
use crate::paper_ingest::SentenceUnit;
use crate::records::{short_id, Warning};
use crate::scalar::Scalar;

pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub function_id: String,
    pub score: f64,
}

/// Candidates for one sentence: scores non-increasing, ties by ascending
/// function id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidates {
    pub sentence_id: String,
    pub k: usize,
    pub ranked: Vec<Candidate>,
}

impl RankedCandidates {
    /// Candidate at 1-based `rank`.
    pub fn at_rank(&self, rank: usize) -> Option<&Candidate> {
        rank.checked_sub(1).and_then(|i| self.ranked.get(i))
    }
}

/// A frozen set of function vectors from one project.
#[derive(Debug, Clone)]
pub struct FunctionIndex<T> {
    vectors: Vec<EmbeddingVector<T>>,
    dim: usize,
}

impl<T: Scalar> FunctionIndex<T> {
    pub fn new(vectors: Vec<EmbeddingVector<T>>) -> Result<Self> {
        let dim = vectors.first().map(|v| v.dim()).unwrap_or(0);
        if let Some(bad) = vectors.iter().find(|v| v.dim() != dim) {
            return Err(Error::validation(format!(
                "function index mixes dims {dim} and {} ({})",
                bad.dim(),
                bad.unit_id
            )));
        }
        Ok(FunctionIndex { vectors, dim })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

fn rank_order<T: Scalar>(a: &(T, &str), b: &(T, &str)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.1.cmp(b.1))
}

/// Exact top-k by cosine similarity over the whole index.
pub fn retrieve_top_k<T: Scalar>(
    sentence: &EmbeddingVector<T>,
    index: &FunctionIndex<T>,
    k: usize,
) -> Result<RankedCandidates> {
    if index.is_empty() {
        return Err(Error::validation("function index is empty"));
    }
    if k == 0 {
        return Err(Error::validation("k must be at least 1"));
    }
    let mut scored: Vec<(T, &str)> = index
        .vectors
        .iter()
        .map(|f| Ok((cosine(sentence, f)?, f.unit_id.as_str())))
        .collect::<Result<_>>()?;
    let take = k.min(scored.len());
    if take < scored.len() {
        scored.select_nth_unstable_by(take - 1, rank_order);
        scored.truncate(take);
    }
    scored.sort_by(rank_order);
    Ok(RankedCandidates {
        sentence_id: sentence.unit_id.clone(),
        k,
        ranked: scored
            .into_iter()
            .map(|(s, id)| Candidate {
                function_id: id.to_string(),
                score: s.as_f64(),
            })
            .collect(),
    })
}

/// Retrieves for every sentence in parallel, keeping input order.
pub fn retrieve_all<T: Scalar>(
    sentences: &[EmbeddingVector<T>],
    index: &FunctionIndex<T>,
    k: usize,
) -> Result<Vec<RankedCandidates>> {
    use rayon::prelude::*;
    sentences
        .par_iter()
        .map(|s| retrieve_top_k(s, index, k))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Open,
    Complete,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskContext {
    pub file_path: String,
    pub qualified_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_comment: Option<String>,
}

/// A sentence paired with its Top-1 candidate for expert review.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: String,
    pub project_id: String,
    pub sentence_id: String,
    pub function_id: String,
    pub sentence_text: String,
    pub function_body: String,
    pub context: TaskContext,
    pub status: TaskStatus,
}

pub fn task_id(sentence_id: &str, function_id: &str) -> String {
    short_id("t-", &[sentence_id, function_id])
}

/// One open task per sentence that has at least one candidate.
pub fn generate_annotation_tasks(
    project_id: &str,
    sentences: &[SentenceUnit],
    functions: &[FunctionUnit],
    ranked: &[RankedCandidates],
) -> (Vec<AnnotationTask>, Vec<Warning>) {
    let by_sentence: HashMap<&str, &RankedCandidates> =
        ranked.iter().map(|r| (r.sentence_id.as_str(), r)).collect();
    let by_function: HashMap<&str, &FunctionUnit> =
        functions.iter().map(|f| (f.function_id.as_str(), f)).collect();
    let mut tasks = Vec::new();
    let mut skipped = Vec::new();
    for s in sentences {
        let top = by_sentence
            .get(s.sentence_id.as_str())
            .and_then(|r| r.ranked.first())
            .and_then(|c| by_function.get(c.function_id.as_str()));
        let Some(f) = top else {
            skipped.push(Warning::new("tasks", &s.sentence_id, "no retrieval candidates"));
            continue;
        };
        tasks.push(AnnotationTask {
            task_id: task_id(&s.sentence_id, &f.function_id),
            project_id: project_id.to_string(),
            sentence_id: s.sentence_id.clone(),
            function_id: f.function_id.clone(),
            sentence_text: s.text.clone(),
            function_body: f.normalized_body.clone(),
            context: TaskContext {
                file_path: f.file_path.clone(),
                qualified_name: f.qualified_name.clone(),
                doc_comment: f.doc_comment.clone(),
            },
            status: TaskStatus::Open,
        });
    }
    (tasks, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::LexicalModel;
    use crate::paper_ingest::SectionKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(id: &str, xs: Vec<f64>) -> EmbeddingVector<f64> {
        EmbeddingVector::normalized(id, xs).unwrap()
    }

    /// Independent oracle: score every function with the explicit formula and
    /// fully sort.
    fn brute_force(s: &EmbeddingVector<f64>, fs: &[EmbeddingVector<f64>]) -> Vec<(String, f64)> {
        let mut all: Vec<(String, f64)> = fs
            .iter()
            .map(|f| {
                let d: f64 = s.values.iter().zip(&f.values).map(|(a, b)| a * b).sum();
                (f.unit_id.clone(), d.clamp(-1.0, 1.0))
            })
            .collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        all
    }

    #[test]
    fn single_function_pool() {
        let idx = FunctionIndex::new(vec![unit("f", vec![1.0, 0.0])]).unwrap();
        let r = retrieve_top_k(&unit("s", vec![0.0, 1.0]), &idx, 10).unwrap();
        assert_eq!(r.ranked.len(), 1);
        assert!(retrieve_top_k(&unit("s", vec![0.0, 1.0]), &FunctionIndex::new(vec![]).unwrap(), 1).is_err());
    }

    #[test]
    fn planted_duplicate_ranks_first() {
        let docs = ["compute alignment score", "parse fasta header", "write bam output", "sort reads"];
        let m = LexicalModel::fit(&docs, None).unwrap();
        let fs: Vec<EmbeddingVector<f64>> =
            docs.iter().enumerate().map(|(i, d)| m.embed(&format!("f{i}"), d).unwrap()).collect();
        let s = m.embed("s", "sort reads").unwrap();
        let r = retrieve_top_k(&s, &FunctionIndex::new(fs).unwrap(), 10).unwrap();
        assert_eq!(r.ranked[0].function_id, "f3");
        assert!((r.ranked[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for pool in [1usize, 7, 50, 500, 1000] {
            // Values from a small grid so exact score ties are common.
            let fs: Vec<_> = (0..pool)
                .map(|i| {
                    let xs: Vec<f64> = (0..4).map(|_| rng.gen_range(0..3) as f64).collect();
                    let xs = if xs.iter().all(|x| *x == 0.0) { vec![1.0, 0.0, 0.0, 0.0] } else { xs };
                    unit(&format!("fn{:04}", (i * 7919) % 10007), xs)
                })
                .collect();
            let s = unit("s", vec![1.0, 1.0, 0.0, 1.0]);
            let idx = FunctionIndex::new(fs.clone()).unwrap();
            let oracle = brute_force(&s, &fs);
            for k in [1, 3, 10, 2000] {
                let got = retrieve_top_k(&s, &idx, k).unwrap();
                let want: Vec<_> = oracle.iter().take(k).collect();
                assert_eq!(got.ranked.len(), want.len());
                for (g, w) in got.ranked.iter().zip(want) {
                    assert_eq!(g.function_id, w.0);
                    assert_eq!(g.score, w.1);
                }
            }
        }
    }

    #[test]
    fn prefix_stability_in_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fs: Vec<_> = (0..200)
            .map(|i| unit(&format!("f{i}"), (0..6).map(|_| rng.gen_range(0.0..1.0)).collect()))
            .collect();
        let idx = FunctionIndex::new(fs).unwrap();
        let s = unit("s", vec![0.3, 0.1, 0.9, 0.2, 0.5, 0.5]);
        let big = retrieve_top_k(&s, &idx, 50).unwrap();
        for k in 1..50 {
            let small = retrieve_top_k(&s, &idx, k).unwrap();
            assert_eq!(&small.ranked[..], &big.ranked[..k]);
        }
    }

    fn sentence(id: &str) -> SentenceUnit {
        SentenceUnit {
            sentence_id: id.into(),
            text: format!("text of {id}"),
            section_heading: "Methods".into(),
            section_kind: SectionKind::Methods,
            section_index: 0,
            paragraph_index: 0,
            char_span: (0, 1),
            keyword_hits: vec![],
        }
    }

    fn function(id: &str) -> FunctionUnit {
        FunctionUnit {
            function_id: id.into(),
            project_id: "p".into(),
            qualified_name: "f".into(),
            file_path: "a.py".into(),
            start_line: 1,
            end_line: 2,
            raw_body: "def f():\n    pass".into(),
            normalized_body: "def f():\n    pass".into(),
            doc_comment: None,
            decorator_names: vec![],
            is_method: false,
            statements: 1,
            trivial: false,
            cyclomatic: 1,
        }
    }

    #[test]
    fn tasks_one_per_retrievable_sentence() {
        let ss: Vec<_> = (0..5).map(|i| sentence(&format!("p:s{i}"))).collect();
        let fs = vec![function("fa"), function("fb")];
        let mut ranked: Vec<_> = ss
            .iter()
            .map(|s| RankedCandidates {
                sentence_id: s.sentence_id.clone(),
                k: 10,
                ranked: vec![Candidate { function_id: "fb".into(), score: 0.5 }],
            })
            .collect();
        let (tasks, skips) = generate_annotation_tasks("p", &ss, &fs, &ranked);
        assert_eq!(tasks.len(), 5);
        assert!(skips.is_empty());
        assert!(tasks.iter().all(|t| t.function_id == "fb" && t.status == TaskStatus::Open));
        let (again, _) = generate_annotation_tasks("p", &ss, &fs, &ranked);
        assert_eq!(tasks, again);

        ranked[2].ranked.clear();
        let (tasks, skips) = generate_annotation_tasks("p", &ss, &fs, &ranked);
        assert_eq!(tasks.len(), 4);
        assert_eq!(skips.len(), 1);
        assert_eq!(skips[0].subject, "p:s2");
    }
}
