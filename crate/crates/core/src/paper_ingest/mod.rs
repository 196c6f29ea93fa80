//! Structured paper documents to implementation-relevant sentence units.
//!
//! The input is an already-structured document (title plus ordered sections
//! of paragraphs). Sections whose kind is unrelated to implementation are
//! dropped, retained paragraphs are segmented, and sentences are kept when
//! they mention enough implementation keywords.

mod segment;
mod tei;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use segment::segment_sentences;
pub use tei::{convert_tei, convert_tei_str};

/// A paper as produced by an external structure extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredPaperDocument {
    pub title: String,
    pub sections: Vec<Section>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub heading: String,
    #[serde(default)]
    pub paragraphs: Vec<String>,
}

impl Section {
    pub fn kind(&self) -> SectionKind {
        classify_section(&self.heading)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    Methods,
    Experiments,
    Background,
    RelatedWork,
    Results,
    Conclusion,
    Acknowledgments,
    References,
    Appendix,
    Abstract,
    Other,
}

impl SectionKind {
    /// Kinds whose content is removed before sentence extraction.
    pub const EXCLUDED: [SectionKind; 4] = [
        SectionKind::References,
        SectionKind::Appendix,
        SectionKind::Conclusion,
        SectionKind::Acknowledgments,
    ];

    pub fn is_excluded(self) -> bool {
        Self::EXCLUDED.contains(&self)
    }
}

/// Heading rules, checked in order; the first rule with a matching needle wins.
const SECTION_RULES: &[(SectionKind, &[&str])] = &[
    (SectionKind::Acknowledgments, &["acknowledg"]),
    (
        SectionKind::References,
        &["reference", "bibliograph", "literature cited", "works cited"],
    ),
    (
        SectionKind::Appendix,
        &["appendix", "appendices", "supplementa"],
    ),
    (SectionKind::Conclusion, &["conclusion", "concluding"]),
    (SectionKind::RelatedWork, &["related work", "prior work"]),
    (SectionKind::Abstract, &["abstract"]),
    (
        SectionKind::Methods,
        &[
            "method",
            "approach",
            "implementation",
            "algorithm",
            "materials",
            "procedure",
        ],
    ),
    (
        SectionKind::Experiments,
        &["result", "evaluation", "experiment", "benchmark"],
    ),
    (
        SectionKind::Background,
        &["background", "introduction", "motivation", "preliminar"],
    ),
];

/// Maps a section heading to its kind by case-insensitive substring rules.
pub fn classify_section(heading: &str) -> SectionKind {
    let h = heading.to_lowercase();
    SECTION_RULES
        .iter()
        .find(|(_, needles)| needles.iter().any(|n| h.contains(n)))
        .map(|(kind, _)| *kind)
        .unwrap_or(SectionKind::Other)
}

/// Reads a document in the native schema. Unknown fields are ignored.
pub fn load_paper(path: &Path) -> Result<StructuredPaperDocument> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_paper(path, &text)
}

pub fn parse_paper(path: &Path, text: &str) -> Result<StructuredPaperDocument> {
    let mut doc: StructuredPaperDocument =
        serde_json::from_str(text).map_err(|e| Error::Record {
            path: path.to_path_buf(),
            line: e.line(),
            detail: format!("column {}: {e}", e.column()),
        })?;
    if doc.sections.is_empty() {
        return Err(Error::validation(format!(
            "{}: document has no sections",
            path.display()
        )));
    }
    for s in &mut doc.sections {
        s.heading = s.heading.trim().to_string();
    }
    Ok(doc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeywordConfig {
    /// Keyword stems matched against word prefixes, case-insensitively.
    pub keywords: Vec<String>,
    pub filter_enabled: bool,
    /// Minimum number of distinct keywords a sentence must mention.
    pub min_hits: usize,
    /// When set, sentences from methods sections bypass the keyword gate.
    pub methods_bypass: bool,
    /// Sentences with fewer word tokens are dropped as parse fragments.
    pub min_words: usize,
}

pub const DEFAULT_KEYWORDS: &[&str] = &[
    "implement", "compute", "calculat", "algorithm", "function", "method", "procedure", "step",
    "input", "output", "parameter", "model", "train", "score", "align", "filter", "cluster",
    "normaliz", "estimat", "iterat",
];

impl Default for KeywordConfig {
    fn default() -> Self {
        KeywordConfig {
            keywords: DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            filter_enabled: true,
            min_hits: 1,
            methods_bypass: false,
            min_words: 4,
        }
    }
}

impl KeywordConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filter_enabled && self.keywords.iter().all(|k| k.trim().is_empty()) {
            return Err(Error::validation(
                "keyword filtering is enabled but the keyword list is empty",
            ));
        }
        if self.filter_enabled && self.min_hits == 0 {
            return Err(Error::validation("min_hits must be at least 1"));
        }
        Ok(())
    }
}

/// One implementation-relevant sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceUnit {
    pub sentence_id: String,
    pub text: String,
    pub section_heading: String,
    pub section_kind: SectionKind,
    pub section_index: usize,
    pub paragraph_index: usize,
    /// Character (not byte) offsets of the sentence within its paragraph.
    pub char_span: (usize, usize),
    pub keyword_hits: Vec<String>,
}

fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty())
}

/// Keywords (in configured order) whose stem prefixes some word of `text`.
///
/// A trailing `e` is dropped from a keyword before matching so that
/// `compute` also matches `computing` and `computation`.
pub fn keyword_hits(text: &str, keywords: &[String]) -> Vec<String> {
    let lowered: Vec<String> = words(text).map(|w| w.to_lowercase()).collect();
    let mut hits = Vec::new();
    for k in keywords {
        let k = k.trim().to_lowercase();
        if k.is_empty() {
            continue;
        }
        let stem = if k.len() > 3 && k.ends_with('e') {
            &k[..k.len() - 1]
        } else {
            k.as_str()
        };
        if lowered.iter().any(|w| w.starts_with(stem)) && !hits.contains(&k) {
            hits.push(k);
        }
    }
    hits
}

pub fn sentence_id(project_id: &str, ordinal: usize) -> String {
    format!("{project_id}:s{ordinal:05}")
}

/// Runs section filtering, segmentation and keyword filtering.
pub fn extract_candidate_sentences(
    project_id: &str,
    doc: &StructuredPaperDocument,
    cfg: &KeywordConfig,
) -> Result<Vec<SentenceUnit>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for (si, section) in doc.sections.iter().enumerate() {
        let kind = section.kind();
        if kind.is_excluded() {
            continue;
        }
        for (pi, paragraph) in section.paragraphs.iter().enumerate() {
            for (text, span) in segment_sentences(paragraph) {
                if words(&text).count() < cfg.min_words {
                    continue;
                }
                let hits = keyword_hits(&text, &cfg.keywords);
                let gated = cfg.filter_enabled && !(cfg.methods_bypass && kind == SectionKind::Methods);
                if gated && hits.len() < cfg.min_hits {
                    continue;
                }
                out.push(SentenceUnit {
                    sentence_id: sentence_id(project_id, out.len()),
                    text,
                    section_heading: section.heading.clone(),
                    section_kind: kind,
                    section_index: si,
                    paragraph_index: pi,
                    char_span: span,
                    keyword_hits: hits,
                });
            }
        }
    }
    Ok(out)
}
