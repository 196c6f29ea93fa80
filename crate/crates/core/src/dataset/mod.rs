//! Labeled dataset construction: hybrid negative sampling around resolved
//! positives, project-level splits and training artifact export.

mod sequence;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairing::RankedCandidates;
use crate::records::{short_id, stable_hash64, Warning};

pub use sequence::{
    count_sequence, export_joint_sequences, CountCallback, JointSequence, SequenceError,
    SequenceExport, SequenceTokenizer, SubtokenCounter, CLS, SEP,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Positive,
    HardNegative,
    RandomNegative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub example_id: String,
    pub sentence_id: String,
    pub function_id: String,
    pub label: u8,
    pub origin: Origin,
    pub source_project: String,
    pub function_project: String,
}

impl Example {
    pub fn new(sentence_id: &str, function_id: &str, origin: Origin, source: &str, fproj: &str) -> Self {
        Example {
            example_id: short_id("e-", &[sentence_id, function_id]),
            sentence_id: sentence_id.to_string(),
            function_id: function_id.to_string(),
            label: u8::from(origin == Origin::Positive),
            origin,
            source_project: source.to_string(),
            function_project: fproj.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Usage(format!("unknown split {other:?}"))),
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: [u32; 3],
    pub train: BTreeSet<String>,
    pub validation: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl SplitAssignment {
    pub fn projects(&self, split: Split) -> &BTreeSet<String> {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn split_of(&self, project: &str) -> Option<Split> {
        Split::ALL
            .into_iter()
            .find(|s| self.projects(*s).contains(project))
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.train.len(), self.validation.len(), self.test.len()]
    }
}

/// Shuffles projects with the seed and cuts at rounded cumulative ratio
/// boundaries, keeping at least one project per split.
pub fn split_by_project(projects: &[String], ratios: [u32; 3], seed: u64) -> Result<SplitAssignment> {
    let unique: BTreeSet<&String> = projects.iter().collect();
    if unique.len() != projects.len() {
        return Err(Error::validation("duplicate project ids in split input"));
    }
    let n = projects.len();
    if n < 3 {
        return Err(Error::validation(format!(
            "need at least 3 projects to split, found {n}"
        )));
    }
    if ratios.iter().any(|&r| r == 0) {
        return Err(Error::validation("split ratios must all be positive"));
    }
    let mut order: Vec<String> = unique.into_iter().cloned().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ stable_hash64("split")));
    let total: u32 = ratios.iter().sum();
    let cut = |upto: u32| ((n as f64) * upto as f64 / total as f64).round() as usize;
    let a = cut(ratios[0]).clamp(1, n - 2);
    let b = cut(ratios[0] + ratios[1]).clamp(a + 1, n - 1);
    Ok(SplitAssignment {
        seed,
        ratios,
        train: order[..a].iter().cloned().collect(),
        validation: order[a..b].iter().cloned().collect(),
        test: order[b..].iter().cloned().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub n_hard: usize,
    pub n_random: usize,
    /// Inclusive 1-based retrieval ranks hard negatives are drawn from.
    pub hard_rank_band: [usize; 2],
    /// Draw random negatives only from projects in the sentence's split.
    pub same_split_random: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            n_hard: 2,
            n_random: 3,
            hard_rank_band: [5, 10],
            same_split_random: true,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.hard_rank_band;
        if lo == 0 || lo > hi {
            return Err(Error::validation(format!(
                "hard_rank_band [{lo}, {hi}] must satisfy 1 <= lo <= hi"
            )));
        }
        if self.n_hard > hi - lo + 1 {
            return Err(Error::validation(format!(
                "n_hard {} exceeds the {} ranks in the hard band",
                self.n_hard,
                hi - lo + 1
            )));
        }
        Ok(())
    }
}

/// What sampling needs to know about a pool function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionInfo {
    pub project_id: String,
    /// Hash of the normalized body; equal hashes mark duplicate code.
    pub body_hash: u64,
}

pub type Catalog = BTreeMap<String, FunctionInfo>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositivePair {
    pub sentence_id: String,
    pub function_id: String,
    pub project_id: String,
}

/// Per-positive RNG stream, independent of processing order.
pub fn positive_rng(seed: u64, sentence_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stable_hash64(sentence_id))
}

fn is_duplicate_of(catalog: &Catalog, positive_fn: &str, fid: &str) -> bool {
    if fid == positive_fn {
        return true;
    }
    match (catalog.get(positive_fn), catalog.get(fid)) {
        (Some(a), Some(b)) => a.body_hash == b.body_hash,
        _ => false,
    }
}

pub fn sample_hard_negatives(
    positive: &Example,
    ranked: &RankedCandidates,
    catalog: &Catalog,
    cfg: &SamplingConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<Example>, Vec<Warning>) {
    let mut warnings = Vec::new();
    let [lo, mut hi] = cfg.hard_rank_band;
    if hi > ranked.ranked.len() {
        warnings.push(Warning::new(
            "sample",
            &positive.sentence_id,
            format!(
                "hard band {lo}-{hi} shrunk to {lo}-{} ranks available",
                ranked.ranked.len()
            ),
        ));
        hi = ranked.ranked.len();
    }
    let band: Vec<&str> = (lo..=hi)
        .filter_map(|r| ranked.at_rank(r))
        .map(|c| c.function_id.as_str())
        .filter(|f| {
            catalog
                .get(*f)
                .is_some_and(|i| i.project_id == positive.source_project)
        })
        .filter(|f| !is_duplicate_of(catalog, &positive.function_id, f))
        .collect();
    let take = cfg.n_hard.min(band.len());
    if take < cfg.n_hard {
        warnings.push(Warning::new(
            "sample",
            &positive.sentence_id,
            format!("only {take} of {} hard negatives available", cfg.n_hard),
        ));
    }
    let out = index::sample(rng, band.len(), take)
        .into_iter()
        .map(|i| {
            Example::new(
                &positive.sentence_id,
                band[i],
                Origin::HardNegative,
                &positive.source_project,
                &positive.source_project,
            )
        })
        .collect();
    (out, warnings)
}

/// Draws from `pool`, which holds (function_id, project) of candidate
/// functions already restricted to the eligible split.
pub fn sample_random_negatives(
    positive: &Example,
    pool: &[(&str, &FunctionInfo)],
    catalog: &Catalog,
    cfg: &SamplingConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<Example>, Vec<Warning>) {
    let eligible: Vec<&(&str, &FunctionInfo)> = pool
        .iter()
        .filter(|(f, info)| {
            info.project_id != positive.source_project
                && !is_duplicate_of(catalog, &positive.function_id, f)
        })
        .collect();
    let take = cfg.n_random.min(eligible.len());
    let mut warnings = Vec::new();
    if take < cfg.n_random {
        warnings.push(Warning::new(
            "sample",
            &positive.sentence_id,
            format!("only {take} of {} random negatives available", cfg.n_random),
        ));
    }
    let out = index::sample(rng, eligible.len(), take)
        .into_iter()
        .map(|i| {
            let (f, info) = eligible[i];
            Example::new(
                &positive.sentence_id,
                f,
                Origin::RandomNegative,
                &positive.source_project,
                &info.project_id,
            )
        })
        .collect();
    (out, warnings)
}

#[derive(Debug, Clone, Default)]
pub struct Assembled {
    pub splits: [Vec<Example>; 3],
    pub warnings: Vec<Warning>,
}

impl Assembled {
    pub fn split(&self, s: Split) -> &[Example] {
        &self.splits[s.index()]
    }
}

/// The examples drawn for one positive: the positive, its hard negatives
/// and its random negatives, in that order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampledGroup {
    pub split: Split,
    pub examples: Vec<Example>,
}

/// Draws negatives for every positive. Groups come back in sentence-id
/// order regardless of input order or thread scheduling.
pub fn sample_groups(
    positives: &[PositivePair],
    ranked: &BTreeMap<String, RankedCandidates>,
    catalog: &Catalog,
    split: &SplitAssignment,
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<(Vec<SampledGroup>, Vec<Warning>)> {
    cfg.validate()?;
    let mut sorted: Vec<&PositivePair> = positives.iter().collect();
    sorted.sort_by(|a, b| a.sentence_id.cmp(&b.sentence_id));
    for w in sorted.windows(2) {
        if w[0].sentence_id == w[1].sentence_id {
            return Err(Error::validation(format!(
                "sentence {} has more than one positive",
                w[0].sentence_id
            )));
        }
    }

    let mut pools: [Vec<(&str, &FunctionInfo)>; 3] = Default::default();
    for (f, info) in catalog {
        let Some(s) = split.split_of(&info.project_id) else {
            continue;
        };
        if cfg.same_split_random {
            pools[s.index()].push((f.as_str(), info));
        } else {
            for p in pools.iter_mut() {
                p.push((f.as_str(), info));
            }
        }
    }

    let groups: Vec<Result<(SampledGroup, Vec<Warning>)>> = sorted
        .par_iter()
        .map(|p| {
            let s = split.split_of(&p.project_id).ok_or_else(|| {
                Error::validation(format!("project {} is not in the split", p.project_id))
            })?;
            let r = ranked.get(&p.sentence_id).ok_or_else(|| {
                Error::missing(
                    format!("retrieval candidates for {}", p.sentence_id),
                    "run `concord retrieve`",
                )
            })?;
            let positive = Example::new(
                &p.sentence_id,
                &p.function_id,
                Origin::Positive,
                &p.project_id,
                &p.project_id,
            );
            let mut rng = positive_rng(seed, &p.sentence_id);
            let (hard, mut w1) = sample_hard_negatives(&positive, r, catalog, cfg, &mut rng);
            let (rand, w2) = sample_random_negatives(&positive, &pools[s.index()], catalog, cfg, &mut rng);
            w1.extend(w2);
            let mut examples = vec![positive];
            examples.extend(hard);
            examples.extend(rand);
            Ok((SampledGroup { split: s, examples }, w1))
        })
        .collect();

    let mut out = Vec::with_capacity(groups.len());
    let mut warnings = Vec::new();
    for g in groups {
        let (group, w) = g?;
        out.push(group);
        warnings.extend(w);
    }
    Ok((out, warnings))
}

/// Collects groups into splits and shuffles each split with the seed.
pub fn assemble_groups(groups: &[SampledGroup], seed: u64) -> Assembled {
    let mut out = Assembled::default();
    for g in groups {
        out.splits[g.split.index()].extend(g.examples.iter().cloned());
    }
    for s in Split::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash64(&format!("shuffle/{s}")));
        out.splits[s.index()].shuffle(&mut rng);
    }
    out
}

pub fn assemble_dataset(
    positives: &[PositivePair],
    ranked: &BTreeMap<String, RankedCandidates>,
    catalog: &Catalog,
    split: &SplitAssignment,
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<Assembled> {
    let (groups, warnings) = sample_groups(positives, ranked, catalog, split, cfg, seed)?;
    let mut out = assemble_groups(&groups, seed);
    out.warnings = warnings;
    Ok(out)
}

/// One row of the per-split count table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRow {
    pub split: String,
    pub projects: usize,
    pub consistent: usize,
    pub inconsistent: usize,
    pub total: usize,
}

pub fn count_table(assembled: &Assembled, split: &SplitAssignment) -> Vec<CountRow> {
    let mut rows: Vec<CountRow> = Split::ALL
        .into_iter()
        .map(|s| {
            let ex = assembled.split(s);
            let consistent = ex.iter().filter(|e| e.label == 1).count();
            CountRow {
                split: s.name().to_string(),
                projects: split.projects(s).len(),
                consistent,
                inconsistent: ex.len() - consistent,
                total: ex.len(),
            }
        })
        .collect();
    let sum = |f: fn(&CountRow) -> usize| rows.iter().map(f).sum();
    let total = CountRow {
        split: "total".into(),
        projects: sum(|r| r.projects),
        consistent: sum(|r| r.consistent),
        inconsistent: sum(|r| r.inconsistent),
        total: sum(|r| r.total),
    };
    rows.push(total);
    rows
}

pub fn render_count_table(rows: &[CountRow]) -> String {
    let mut out = format!(
        "{:<12} {:>10} {:>12} {:>14} {:>8}\n",
        "split", "projects", "consistent", "inconsistent", "total"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<12} {:>10} {:>12} {:>14} {:>8}\n",
            r.split, r.projects, r.consistent, r.inconsistent, r.total
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub seed: u64,
    pub config_digest: String,
    pub sampling: SamplingConfig,
    pub split: SplitAssignment,
    pub counts: Vec<CountRow>,
    /// SHA-256 of each split's example file.
    pub files: BTreeMap<String, String>,
    pub warnings: usize,
    pub representation: String,
}

pub const REPRESENTATION_NOTE: &str = "native classifier: provider embeddings u (sentence) and v (function) \
combined as [u; v; u*v; |u-v|]; joint sequences `[CLS] sentence [SEP] code [SEP]` are exported for external encoders";

/// Checks the structural guarantees of an assembled dataset. Returns one
/// message per violation.
pub fn check_integrity(assembled: &Assembled, split: &SplitAssignment) -> Vec<String> {
    let mut errors = Vec::new();
    let mut pairs = BTreeSet::new();
    for s in Split::ALL {
        for e in assembled.split(s) {
            if !pairs.insert((e.sentence_id.clone(), e.function_id.clone())) {
                errors.push(format!("duplicate pair {} / {}", e.sentence_id, e.function_id));
            }
            if split.split_of(&e.source_project) != Some(s) {
                errors.push(format!("{}: sentence project outside {s}", e.example_id));
            }
            if split.split_of(&e.function_project) != Some(s) {
                errors.push(format!("{}: function project crosses out of {s}", e.example_id));
            }
            let ok = match e.origin {
                Origin::Positive => e.label == 1 && e.function_project == e.source_project,
                Origin::HardNegative => e.label == 0 && e.function_project == e.source_project,
                Origin::RandomNegative => e.label == 0 && e.function_project != e.source_project,
            };
            if !ok {
                errors.push(format!("{}: origin/label/project mismatch", e.example_id));
            }
        }
    }
    for a in Split::ALL {
        for b in Split::ALL {
            if a < b && !split.projects(a).is_disjoint(split.projects(b)) {
                errors.push(format!("projects shared by {a} and {b}"));
            }
        }
    }
    errors
}
