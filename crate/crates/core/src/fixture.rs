//! Synthetic corpora for end-to-end runs and tests.
//!
//! [`generate`] writes a set of projects (paper JSON, a small Python
//! repository) together with scripted annotator labels whose resolution
//! yields a chosen number of positives per split. [`planted_signal`] builds
//! feature sets in which consistent pairs share injected subtokens, and
//! [`oversized_sequences`] produces functions far beyond any token budget.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{LabelImport, Verdict};
use crate::classifier::{build_pair_feature, FeatureSet};
use crate::dataset::{split_by_project, Example, Origin, Split, SplitAssignment};
use crate::embedding::LexicalModel;
use crate::error::{Error, Result};
use crate::paper_ingest::{keyword_hits, sentence_id, Section, StructuredPaperDocument, DEFAULT_KEYWORDS};
use crate::records::{write_atomic, write_json, write_lines};

pub const LABELS_FILE: &str = "labels.jsonl";
pub const PROJECTS_FILE: &str = "projects.tsv";
pub const ANNOTATORS: [&str; 3] = ["ann-1", "ann-2", "ann-3"];
const BASE_TIMESTAMP: u64 = 1_700_000_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureConfig {
    pub projects: usize,
    /// Pipeline seed; the positives are laid out for the split it selects.
    pub seed: u64,
    pub ratios: [u32; 3],
    /// Positive decisions per split (train, validation, test).
    pub positives: [usize; 3],
    /// Decoy functions per repository that no sentence describes.
    pub decoys: usize,
    /// Trivial accessors per repository.
    pub trivial: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            projects: 48,
            seed: 42,
            ratios: [8, 1, 1],
            positives: [957, 90, 83],
            decoys: 4,
            trivial: 2,
        }
    }
}

/// A registered-project line of `projects.tsv`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureProject {
    pub project_id: String,
    pub paper: PathBuf,
    pub repo: PathBuf,
    pub stars: u64,
    pub citations: u64,
}

#[derive(Debug, Clone)]
pub struct FixtureSummary {
    pub projects: Vec<FixtureProject>,
    pub split: SplitAssignment,
    /// Expected sentence texts per project, in extraction order.
    pub sentences: BTreeMap<String, Vec<String>>,
    pub positives: [usize; 3],
    pub labels: usize,
}

/// The outcome scripted for one extracted sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Script {
    Positive,
    Dissent,
    Unsure,
    Incomplete,
}

const SCRIPTED_NON_POSITIVE: [Script; 3] = [Script::Dissent, Script::Unsure, Script::Incomplete];

const VERBS: [&str; 8] = ["compute", "filter", "normalize", "estimate", "cluster", "align", "score", "calculate"];

const FILLERS: [&str; 6] = [
    "Biological systems are complex and diverse across many scales.",
    "Researchers have long studied these questions with great care.",
    "Large public datasets are now widely available to everyone.",
    "This work builds on several earlier studies in the field.",
    "Reproducibility remains a central concern for the community.",
    "Many open questions still remain about these phenomena.",
];

const SYLLABLES: [&str; 16] = [
    "ba", "ko", "du", "mi", "fe", "ra", "lo", "zu", "ne", "vi", "sa", "tu", "po", "ge", "hy", "wa",
];

/// Distinct pronounceable words that never match a default keyword.
struct WordSource {
    next: u64,
    keywords: Vec<String>,
}

impl WordSource {
    fn new() -> Self {
        WordSource {
            next: 4096,
            keywords: DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn word(&mut self) -> String {
        loop {
            let mut n = self.next;
            self.next += 1;
            let mut w = String::new();
            while n > 0 {
                w.push_str(SYLLABLES[(n % 16) as usize]);
                n /= 16;
            }
            if keyword_hits(&w, &self.keywords).is_empty() {
                return w;
            }
        }
    }
}

struct Described {
    verb: &'static str,
    a: String,
    b: String,
}

impl Described {
    fn name(&self) -> String {
        format!("{}_{}_{}", self.verb, self.a, self.b)
    }

    fn sentence(&self) -> String {
        format!(
            "We {} the {} {} values for every record in the collection.",
            self.verb, self.a, self.b
        )
    }

    fn code(&self, k: usize) -> String {
        let (a, b, name) = (&self.a, &self.b, self.name());
        format!(
            "def {name}(records, {a}_weight=1.0):\n    \"\"\"{verb} the {a} {b} values.\"\"\"\n    {b}_total = 0.0\n    for item in records:\n        {b}_total += item * {a}_weight\n    return {b}_total + {k}\n",
            verb = self.verb
        )
    }
}

fn decoy(word: &str, k: usize) -> String {
    format!(
        "def helper_{word}(values):\n    {word}_acc = []\n    for v in values:\n        {word}_acc.append(v - {k})\n    return {word}_acc\n"
    )
}

fn accessor(word: &str) -> String {
    format!("    def get_{word}(self):\n        return self._{word}\n")
}

/// Splits `total` over `n` projects as evenly as possible, earlier projects
/// taking the remainder.
fn distribute(total: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| total / n + usize::from(i < total % n)).collect()
}

pub fn project_ids(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("proj-{i:02}")).collect()
}

/// Writes the fixture corpus under `out`.
pub fn generate(out: &Path, cfg: &FixtureConfig) -> Result<FixtureSummary> {
    let ids = project_ids(cfg.projects);
    let split = split_by_project(&ids, cfg.ratios, cfg.seed)?;
    let mut per_project: BTreeMap<String, usize> = BTreeMap::new();
    for s in Split::ALL {
        let members: Vec<&String> = split.projects(s).iter().collect();
        let counts = distribute(cfg.positives[s as usize], members.len());
        for (p, c) in members.into_iter().zip(counts) {
            per_project.insert(p.clone(), c);
        }
    }

    let mut words = WordSource::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xf1c7_0e5);
    let mut labels = Vec::new();
    let mut projects = Vec::new();
    let mut sentences = BTreeMap::new();
    let mut ts = BASE_TIMESTAMP;

    for (pi, pid) in ids.iter().enumerate() {
        let mut scripts = vec![Script::Positive; per_project[pid]];
        scripts.extend(SCRIPTED_NON_POSITIVE);
        let described: Vec<Described> = scripts
            .iter()
            .enumerate()
            .map(|(i, _)| Described {
                verb: VERBS[(pi + i) % VERBS.len()],
                a: words.word(),
                b: words.word(),
            })
            .collect();

        let texts: Vec<String> = described.iter().map(Described::sentence).collect();
        let methods: Vec<String> = texts.chunks(5).map(|c| c.join(" ")).collect();
        let doc = StructuredPaperDocument {
            title: format!("Synthetic study {pid}"),
            sections: vec![
                Section {
                    heading: "Abstract".into(),
                    paragraphs: vec![FILLERS[0].into()],
                },
                Section {
                    heading: "1 Introduction".into(),
                    paragraphs: vec![FILLERS[1..4].join(" ")],
                },
                Section {
                    heading: "2 Methods".into(),
                    paragraphs: methods,
                },
                Section {
                    heading: "3 Conclusion".into(),
                    paragraphs: vec![format!("We compute the {} values in future work.", words.word())],
                },
                Section {
                    heading: "References".into(),
                    paragraphs: vec!["Smith J. A method to compute and filter scores. 2020.".into()],
                },
            ],
        };
        let paper = out.join("papers").join(format!("{pid}.json"));
        write_json(&paper, &doc)?;

        let repo = out.join("repos").join(pid);
        let module = pid.replace('-', "_");
        let mut core = String::from("\"\"\"Core routines.\"\"\"\n\n");
        for (i, d) in described.iter().enumerate() {
            core.push_str(&d.code(i));
            core.push('\n');
        }
        let mut utils = String::from("\"\"\"Helpers.\"\"\"\n\n");
        for i in 0..cfg.decoys {
            utils.push_str(&decoy(&words.word(), i));
            utils.push('\n');
        }
        utils.push_str("class Holder:\n");
        for _ in 0..cfg.trivial.max(1) {
            utils.push_str(&accessor(&words.word()));
        }
        write_atomic(&repo.join(&module).join("core.py"), core.as_bytes())?;
        write_atomic(&repo.join(&module).join("utils.py"), utils.as_bytes())?;
        write_atomic(&repo.join(&module).join("__init__.py"), b"")?;
        write_atomic(
            &repo.join("tests").join("test_core.py"),
            b"def test_placeholder():\n    assert True\n    assert 1 == 1\n",
        )?;

        for (ordinal, script) in scripts.iter().enumerate() {
            let sid = sentence_id(pid, ordinal);
            let verdicts: &[Verdict] = match script {
                Script::Positive => &[Verdict::Consistent; 3],
                Script::Dissent => &[Verdict::Consistent, Verdict::Consistent, Verdict::Inconsistent],
                Script::Unsure => &[Verdict::Consistent, Verdict::Unsure, Verdict::Consistent],
                Script::Incomplete => &[Verdict::Consistent, Verdict::Consistent],
            };
            for (a, v) in ANNOTATORS.iter().zip(verdicts) {
                ts += 1;
                labels.push(LabelImport {
                    task_id: None,
                    sentence_id: Some(sid.clone()),
                    annotator_id: a.to_string(),
                    verdict: *v,
                    timestamp: Some(ts),
                });
            }
        }
        sentences.insert(pid.clone(), texts);
        projects.push(FixtureProject {
            project_id: pid.clone(),
            paper,
            repo,
            stars: rng.gen_range(0..500),
            citations: rng.gen_range(0..200),
        });
    }

    labels.shuffle(&mut rng);
    write_lines(&out.join(LABELS_FILE), &labels)?;
    let mut tsv = String::from("project_id\tpaper\trepo\tstars\tcitations\n");
    for p in &projects {
        let _ = writeln!(
            tsv,
            "{}\t{}\t{}\t{}\t{}",
            p.project_id,
            p.paper.strip_prefix(out).unwrap_or(&p.paper).display(),
            p.repo.strip_prefix(out).unwrap_or(&p.repo).display(),
            p.stars,
            p.citations
        );
    }
    write_atomic(&out.join(PROJECTS_FILE), tsv.as_bytes())?;
    Ok(FixtureSummary {
        projects,
        split,
        sentences,
        positives: cfg.positives,
        labels: labels.len(),
    })
}

/// Reads `projects.tsv`; relative paths resolve against its directory.
pub fn read_projects(path: &Path) -> Result<Vec<FixtureProject>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |detail: String| Error::Record {
            path: path.to_path_buf(),
            line: i + 1,
            detail,
        };
        if cols.len() != 5 {
            return Err(bad(format!("expected 5 columns, found {}", cols.len())));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|e| bad(format!("{s:?}: {e}")));
        out.push(FixtureProject {
            project_id: cols[0].to_string(),
            paper: base.join(cols[1]),
            repo: base.join(cols[2]),
            stars: num(cols[3])?,
            citations: num(cols[4])?,
        });
    }
    Ok(out)
}

/// Feature sets where a consistent pair shares `signal` injected subtokens
/// and a negative pair shares none. Each split holds `positives[s]`
/// positives and five negatives per positive.
pub fn planted_signal(positives: [usize; 3], seed: u64, hash_dim: usize) -> Result<[FeatureSet<f64>; 3]> {
    let mut words = WordSource::new();
    let vocab: Vec<String> = (0..400).map(|_| words.word()).collect();
    let common = ["the", "value", "data", "list", "result", "index", "item", "count"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signal = 4;

    let mut texts: Vec<(u8, usize, String, String)> = Vec::new();
    for (si, n) in positives.iter().enumerate() {
        for _ in 0..*n {
            let chosen: Vec<&String> = vocab.choose_multiple(&mut rng, signal * 6).collect();
            let filler = |rng: &mut ChaCha8Rng| -> String {
                common.choose_multiple(rng, 3).copied().collect::<Vec<_>>().join(" ")
            };
            let own = &chosen[..signal];
            let sentence = format!("{} {}", own.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" "), filler(&mut rng));
            let pos_code = format!("{}_{} = {}", own[0], own[1], own[2..].iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" + "));
            texts.push((1, si, sentence.clone(), format!("{pos_code} # {}", filler(&mut rng))));
            for k in 1..6 {
                let other = &chosen[k * signal..(k + 1) * signal];
                let code = format!("{}_{} = {}", other[0], other[1], other[2..].iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" + "));
                texts.push((0, si, sentence.clone(), format!("{code} # {}", filler(&mut rng))));
            }
        }
    }
    let corpus: Vec<&str> = texts.iter().flat_map(|t| [t.2.as_str(), t.3.as_str()]).collect();
    let model = LexicalModel::fit(&corpus, (hash_dim > 0).then_some(hash_dim))?;
    let mut sets: [FeatureSet<f64>; 3] = Default::default();
    for (i, (label, si, s, c)) in texts.iter().enumerate() {
        let u = model
            .embed::<f64>("s", s)
            .ok_or_else(|| Error::validation("planted sentence is not embeddable"))?;
        let v = model
            .embed::<f64>("f", c)
            .ok_or_else(|| Error::validation("planted function is not embeddable"))?;
        let set = &mut sets[*si];
        set.ids.push(format!("planted-{i:06}"));
        set.features.push(build_pair_feature(&u.values, &v.values)?.values);
        set.labels.push(*label);
    }
    Ok(sets)
}

/// Lookup tables and examples for a sequence export in which every
/// function is far longer than `budget`.
pub struct OversizedFixture {
    pub examples: Vec<Example>,
    pub sentences: BTreeMap<String, String>,
    pub code: BTreeMap<String, String>,
}

pub fn oversized_sequences(n: usize, budget: usize, seed: u64) -> OversizedFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut words = WordSource::new();
    let vocab: Vec<String> = (0..200).map(|_| words.word()).collect();
    let mut out = OversizedFixture {
        examples: Vec::new(),
        sentences: BTreeMap::new(),
        code: BTreeMap::new(),
    };
    for i in 0..n {
        let sid = format!("big:s{i:05}");
        let fid = format!("big:f{i:05}");
        let sentence_words = rng.gen_range(5..60);
        let sentence: Vec<&str> = (0..sentence_words)
            .map(|_| vocab.choose(&mut rng).expect("non-empty").as_str())
            .collect();
        let mut code = format!("def big_{i}(x):\n");
        let target = budget * rng.gen_range(2..6);
        let mut approx = 0;
        while approx < target {
            let a = vocab.choose(&mut rng).expect("non-empty");
            let b = vocab.choose(&mut rng).expect("non-empty");
            let _ = writeln!(code, "    {a}_{b} = x.{b}({a}, \"{i}\") + [1, 2]");
            approx += 16;
        }
        out.sentences.insert(sid.clone(), sentence.join(" ") + ".");
        out.code.insert(fid.clone(), code);
        out.examples.push(Example::new(&sid, &fid, Origin::Positive, "big", "big"));
    }
    out
}
