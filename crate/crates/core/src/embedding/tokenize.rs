//! Identifier-aware subtoken splitting shared by embedding and sequence export.

/// Byte spans of subtokens in `text`.
///
/// Alphanumeric runs are split at `camelCase` humps, at the last capital of
/// an uppercase run followed by lowercase (`HTTPServer` gives `HTTP`,
/// `Server`) and at letter/digit boundaries. Underscores and other
/// punctuation separate tokens; with `punctuation` set each punctuation
/// character is reported as its own token.
pub fn subtoken_spans(text: &str, punctuation: bool) -> Vec<(usize, usize)> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (start, c) = chars[i];
        if c.is_alphanumeric() {
            let mut j = i + 1;
            while j < chars.len() && chars[j].1.is_alphanumeric() && !boundary(&chars, j) {
                j += 1;
            }
            let end = chars.get(j).map(|x| x.0).unwrap_or(text.len());
            spans.push((start, end));
            i = j;
        } else {
            if punctuation && !c.is_whitespace() && c != '_' {
                spans.push((start, start + c.len_utf8()));
            }
            i += 1;
        }
    }
    spans
}

/// Whether a new subtoken starts at `chars[j]` given the preceding character.
fn boundary(chars: &[(usize, char)], j: usize) -> bool {
    let prev = chars[j - 1].1;
    let cur = chars[j].1;
    if prev.is_numeric() != cur.is_numeric() {
        return true;
    }
    if prev.is_lowercase() && cur.is_uppercase() {
        return true;
    }
    if prev.is_uppercase() && cur.is_uppercase() {
        if let Some(&(_, next)) = chars.get(j + 1) {
            return next.is_lowercase();
        }
    }
    false
}

/// Lowercased word subtokens of mixed prose and code.
pub fn tokenize_mixed(text: &str) -> Vec<String> {
    subtoken_spans(text, false)
        .into_iter()
        .map(|(s, e)| text[s..e].to_lowercase())
        .collect()
}
