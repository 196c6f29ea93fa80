//! Joint `[CLS] sentence [SEP] code [SEP]` sequences for external encoders.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Example;
use crate::embedding::subtoken_spans;
use crate::error::{Error, Result};

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
const MARKERS: usize = 3;

/// Token accounting used for the budget. Marker tokens are counted by the
/// exporter, not the tokenizer.
pub trait SequenceTokenizer: Sync {
    fn count(&self, text: &str) -> usize;

    /// Longest prefix of `text` with at most `max` tokens. The default
    /// bisects over char boundaries and assumes counts grow with prefix
    /// length.
    fn truncate<'a>(&self, text: &'a str, max: usize) -> &'a str {
        if self.count(text) <= max {
            return text;
        }
        let bounds: Vec<usize> = text
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(text.len()))
            .collect();
        let (mut lo, mut hi) = (0usize, bounds.len() - 1);
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if self.count(&text[..bounds[mid]]) <= max {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        &text[..bounds[lo]]
    }
}

/// Default tokenizer: whitespace, identifier subtokens and single
/// punctuation characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct SubtokenCounter;

impl SequenceTokenizer for SubtokenCounter {
    fn count(&self, text: &str) -> usize {
        subtoken_spans(text, true).len()
    }

    fn truncate<'a>(&self, text: &'a str, max: usize) -> &'a str {
        let spans = subtoken_spans(text, true);
        if spans.len() <= max {
            text
        } else if max == 0 {
            ""
        } else {
            &text[..spans[max - 1].1]
        }
    }
}

/// Adapts an external tokenizer that only reports token counts.
pub struct CountCallback<F>(pub F);

impl<F: Fn(&str) -> usize + Sync> SequenceTokenizer for CountCallback<F> {
    fn count(&self, text: &str) -> usize {
        (self.0)(text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSequence {
    pub example_id: String,
    pub label: u8,
    pub text: String,
    pub tokens: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceError {
    pub example_id: String,
    pub sentence_tokens: usize,
    pub budget: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct SequenceExport {
    pub records: Vec<JointSequence>,
    pub errors: Vec<SequenceError>,
}

fn join(sentence: &str, code: &str) -> String {
    format!("{CLS} {sentence} {SEP} {code} {SEP}")
}

/// Counts a rendered sequence: each marker is one token, everything between
/// markers goes through the tokenizer.
pub fn count_sequence(tok: &dyn SequenceTokenizer, text: &str) -> usize {
    let mut n = 0;
    let mut rest = text;
    loop {
        let next = [CLS, SEP]
            .iter()
            .filter_map(|m| rest.find(m).map(|i| (i, m.len())))
            .min();
        match next {
            Some((i, len)) => {
                n += tok.count(&rest[..i]) + 1;
                rest = &rest[i + len..];
            }
            None => return n + tok.count(rest),
        }
    }
}

/// Renders one sequence per example within `budget` tokens, truncating the
/// code from the end. Examples whose sentence alone does not fit are
/// reported as errors and skipped.
pub fn export_joint_sequences(
    examples: &[Example],
    sentences: &BTreeMap<String, String>,
    code: &BTreeMap<String, String>,
    budget: usize,
    tok: &dyn SequenceTokenizer,
) -> Result<SequenceExport> {
    let rendered: Vec<Result<std::result::Result<JointSequence, SequenceError>>> = examples
        .par_iter()
        .map(|e| {
            let s = sentences.get(&e.sentence_id).ok_or_else(|| {
                Error::missing(format!("sentence {}", e.sentence_id), "run `concord ingest-paper`")
            })?;
            let c = code.get(&e.function_id).ok_or_else(|| {
                Error::missing(format!("function {}", e.function_id), "run `concord ingest-code`")
            })?;
            let st = tok.count(s);
            if st + MARKERS > budget {
                return Ok(Err(SequenceError {
                    example_id: e.example_id.clone(),
                    sentence_tokens: st,
                    budget,
                    detail: format!(
                        "sentence needs {} tokens with markers, budget is {budget}",
                        st + MARKERS
                    ),
                }));
            }
            let room = budget - st - MARKERS;
            let kept = tok.truncate(c, room);
            let truncated = kept.len() < c.len();
            let kept = if truncated { kept.trim_end() } else { kept };
            Ok(Ok(JointSequence {
                example_id: e.example_id.clone(),
                label: e.label,
                text: join(s, kept),
                tokens: st + MARKERS + tok.count(kept),
                truncated,
            }))
        })
        .collect();
    let mut out = SequenceExport::default();
    for r in rendered {
        match r? {
            Ok(rec) => out.records.push(rec),
            Err(err) => out.errors.push(err),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::Origin;
    use super::*;
    use proptest::prelude::*;

    fn fixture(sentence: &str, body: &str) -> (Vec<Example>, BTreeMap<String, String>, BTreeMap<String, String>) {
        let e = Example::new("s", "f", Origin::Positive, "p", "p");
        let s = BTreeMap::from([("s".to_string(), sentence.to_string())]);
        let c = BTreeMap::from([("f".to_string(), body.to_string())]);
        (vec![e], s, c)
    }

    #[test]
    fn short_pair_is_exact_concatenation() {
        let (e, s, c) = fixture("We compute the score.", "def score(x):\n    return x");
        let out = export_joint_sequences(&e, &s, &c, 512, &SubtokenCounter).unwrap();
        let r = &out.records[0];
        assert_eq!(r.text, "[CLS] We compute the score. [SEP] def score(x):\n    return x [SEP]");
        assert!(!r.truncated);
        assert_eq!(r.tokens, count_sequence(&SubtokenCounter, &r.text));
    }

    #[test]
    fn long_function_truncated_to_budget() {
        let body: String = (0..2000).map(|i| format!("tok{} ", i % 7)).collect::<String>().replace("tok", "ab");
        let sentence = "The aligner scores each read against the reference.";
        let (e, s, c) = fixture(sentence, &body);
        let out = export_joint_sequences(&e, &s, &c, 512, &SubtokenCounter).unwrap();
        let r = &out.records[0];
        assert!(r.truncated);
        assert_eq!(r.tokens, 512);
        assert_eq!(count_sequence(&SubtokenCounter, &r.text), 512);
        assert!(r.text.starts_with(&format!("[CLS] {sentence} [SEP] ")));
        assert!(r.text.ends_with(" [SEP]"));
    }

    #[test]
    fn oversized_sentence_is_skipped_not_cut() {
        let sentence = "word ".repeat(600);
        let (e, s, c) = fixture(&sentence, "def f(): pass");
        let out = export_joint_sequences(&e, &s, &c, 512, &SubtokenCounter).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.errors.len(), 1);
        assert_eq!(out.errors[0].sentence_tokens, 600);
    }

    #[test]
    fn count_callback_adapter() {
        let words = CountCallback(|t: &str| t.split_whitespace().count());
        let body = "a b c d e f g h i j";
        let (e, s, c) = fixture("one two", body);
        let out = export_joint_sequences(&e, &s, &c, 9, &words).unwrap();
        let r = &out.records[0];
        assert!(r.truncated);
        assert_eq!(r.text, "[CLS] one two [SEP] a b c d [SEP]");
        assert_eq!(r.tokens, 9);
    }

    #[test]
    fn missing_function_is_dependency_error() {
        let (e, s, _) = fixture("x y", "");
        let e = export_joint_sequences(&e, &s, &BTreeMap::new(), 512, &SubtokenCounter).unwrap_err();
        assert_eq!(e.class(), crate::ErrorClass::DependencyMissing);
    }

    proptest! {
        #[test]
        fn never_over_budget(sentence in "[A-Za-z ]{1,80}", body in "[a-zA-Z0-9_(): \n.]{0,600}", budget in 8usize..200) {
            let (e, s, c) = fixture(&sentence, &body);
            let out = export_joint_sequences(&e, &s, &c, budget, &SubtokenCounter).unwrap();
            for r in &out.records {
                prop_assert!(count_sequence(&SubtokenCounter, &r.text) <= budget);
                let prefix = format!("[CLS] {sentence} [SEP] ");
                prop_assert!(r.text.starts_with(&prefix));
            }
            prop_assert_eq!(out.records.len() + out.errors.len(), 1);
        }
    }
}
