//! Rule-based sentence segmentation for scientific prose.

/// Lowercased tokens (including their final period) that never end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "al.", "e.g.", "i.e.", "fig.", "figs.", "eq.", "eqs.", "ref.", "refs.", "sec.", "secs.",
    "tab.", "vs.", "cf.", "approx.", "no.", "nos.", "vol.", "pp.", "ch.", "resp.", "ca.",
    "viz.", "dr.", "prof.", "mr.", "mrs.", "ms.", "st.", "jr.", "sr.", "inc.", "ltd.", "co.",
    "eqn.", "suppl.", "ver.",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];
const OPENERS: &[char] = &['"', '\'', '(', '[', '\u{201c}', '\u{2018}'];

/// Splits a paragraph into sentences.
///
/// Returns each trimmed sentence with its `(start, end)` character offsets in
/// the paragraph. A break happens after `.`, `?` or `!` (plus any closing
/// quotes or brackets) when followed by whitespace and then an uppercase
/// letter or digit, possibly behind an opening quote or bracket. Periods
/// ending a known abbreviation or a single-letter initial do not break.
/// Decimal numbers and version strings never break because a break needs
/// whitespace after the terminator.
pub fn segment_sentences(paragraph: &str) -> Vec<(String, (usize, usize))> {
    let chars: Vec<char> = paragraph.chars().collect();
    let n = chars.len();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < n {
        let c = chars[i];
        if matches!(c, '.' | '?' | '!') {
            let mut end = i + 1;
            while end < n && (matches!(chars[end], '.' | '?' | '!') || CLOSERS.contains(&chars[end])) {
                end += 1;
            }
            if end < n && chars[end].is_whitespace() && starts_sentence(&chars, end) && !protected(&chars, start, i, c) {
                push(&chars, start, end, &mut out);
                start = end;
            }
            i = end;
        } else {
            i += 1;
        }
    }
    push(&chars, start, n, &mut out);
    out
}

fn starts_sentence(chars: &[char], mut j: usize) -> bool {
    while j < chars.len() && chars[j].is_whitespace() {
        j += 1;
    }
    while j < chars.len() && OPENERS.contains(&chars[j]) {
        j += 1;
    }
    j < chars.len() && (chars[j].is_uppercase() || chars[j].is_ascii_digit())
}

/// True when the terminator at `pos` belongs to an abbreviation or initial.
fn protected(chars: &[char], floor: usize, pos: usize, term: char) -> bool {
    if term != '.' {
        return false;
    }
    let mut w = pos;
    while w > floor && !chars[w - 1].is_whitespace() {
        w -= 1;
    }
    let word: String = chars[w..=pos].iter().collect();
    let word = word.trim_start_matches(|c| OPENERS.contains(&c));
    let lower = word.to_lowercase();
    if ABBREVIATIONS.contains(&lower.as_str()) {
        return true;
    }
    // A single uppercase letter, as in "J. Smith".
    let core: Vec<char> = word.trim_end_matches('.').chars().collect();
    core.len() == 1 && core[0].is_uppercase()
}

fn push(chars: &[char], start: usize, end: usize, out: &mut Vec<(String, (usize, usize))>) {
    let mut s = start;
    let mut e = end;
    while s < e && chars[s].is_whitespace() {
        s += 1;
    }
    while e > s && chars[e - 1].is_whitespace() {
        e -= 1;
    }
    if s < e {
        out.push((chars[s..e].iter().collect(), (s, e)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(p: &str) -> Vec<String> {
        segment_sentences(p).into_iter().map(|(t, _)| t).collect()
    }

    #[test]
    fn basic_cases() {
        assert!(segment_sentences("").is_empty());
        assert!(segment_sentences("   ").is_empty());
        assert_eq!(
            texts("We align sentences. We extract functions."),
            vec!["We align sentences.", "We extract functions."]
        );
        assert_eq!(
            texts("As shown by Smith et al. (2020), see Fig. 3."),
            vec!["As shown by Smith et al. (2020), see Fig. 3."]
        );
    }

    /// Hand-segmented corpus: sentences within a paragraph are separated by `|`.
    const CORPUS: &str = include_str!("../../tests/data/segmentation_corpus.txt");

    #[test]
    fn hand_segmented_corpus() {
        let mut checked = 0;
        for (lineno, line) in CORPUS.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let expected: Vec<String> = line.split('|').map(|s| s.trim().to_string()).collect();
            let paragraph = expected.join(" ");
            assert_eq!(texts(&paragraph), expected, "corpus line {}", lineno + 1);
            checked += 1;
        }
        assert!(checked >= 50, "corpus has {checked} paragraphs");
    }

    #[test]
    fn spans_tile_paragraph() {
        for line in CORPUS.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')) {
            let paragraph = line.replace('|', " ");
            check_tiling(&paragraph);
        }
    }

    fn check_tiling(paragraph: &str) {
        let chars: Vec<char> = paragraph.chars().collect();
        let segs = segment_sentences(paragraph);
        let mut prev = 0;
        for (text, (s, e)) in &segs {
            assert!(*s >= prev && s < e);
            assert!(chars[prev..*s].iter().all(|c| c.is_whitespace()));
            assert_eq!(&chars[*s..*e].iter().collect::<String>(), text);
            prev = *e;
        }
        assert!(chars[prev..].iter().all(|c| c.is_whitespace()));
        let joined = segs.iter().map(|(t, _)| t.as_str()).collect::<Vec<_>>().join(" ");
        let squash = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
        assert_eq!(squash(&joined), squash(paragraph));
    }

    proptest! {
        #[test]
        fn reconstruction_property(p in "[A-Za-z0-9 .?!()\"',\n]{0,200}") {
            check_tiling(&p);
        }
    }
}
