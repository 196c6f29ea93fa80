//! Whitespace normalization of function bodies.

pub const NORMALIZATION_VERSION: &str = "ws-v1";

#[derive(Clone, Copy, PartialEq)]
enum Quote {
    None,
    Single(char),
    Triple(char),
}

/// Drops blank lines, strips trailing whitespace and collapses runs of spaces
/// outside string literals, keeping leading indentation.
///
/// String state carries across lines so triple-quoted literals are left
/// alone. The result is idempotent.
pub fn normalize_code(raw: &str) -> String {
    let mut quote = Quote::None;
    let mut out: Vec<String> = Vec::new();
    for line in raw.lines() {
        let line = line.trim_end();
        if line.trim().is_empty() {
            continue;
        }
        let indent_len = line.len() - line.trim_start().len();
        let (indent, rest) = line.split_at(indent_len);
        let (body, next) = collapse(rest, quote);
        quote = next;
        out.push(format!("{indent}{body}"));
    }
    out.join("\n")
}

fn collapse(s: &str, mut quote: Quote) -> (String, Quote) {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    let mut comment = false;
    while i < chars.len() {
        let c = chars[i];
        match quote {
            Quote::None => {
                if comment {
                    push_space_aware(&mut out, c);
                } else if c == '#' {
                    comment = true;
                    out.push(c);
                } else if c == '"' || c == '\'' {
                    if i + 2 < chars.len() && chars[i + 1] == c && chars[i + 2] == c {
                        quote = Quote::Triple(c);
                        out.extend([c, c, c]);
                        i += 3;
                        continue;
                    }
                    quote = Quote::Single(c);
                    out.push(c);
                } else {
                    push_space_aware(&mut out, c);
                }
            }
            Quote::Single(q) => {
                out.push(c);
                if c == '\\' && i + 1 < chars.len() {
                    out.push(chars[i + 1]);
                    i += 2;
                    continue;
                }
                if c == q {
                    quote = Quote::None;
                }
            }
            Quote::Triple(q) => {
                if c == '\\' && i + 1 < chars.len() {
                    out.push(c);
                    out.push(chars[i + 1]);
                    i += 2;
                    continue;
                }
                if c == q && chars.get(i + 1) == Some(&q) && chars.get(i + 2) == Some(&q) {
                    out.extend([q, q, q]);
                    quote = Quote::None;
                    i += 3;
                    continue;
                }
                out.push(c);
            }
        }
        i += 1;
    }
    // Single-quoted literals cannot span lines.
    if let Quote::Single(_) = quote {
        quote = Quote::None;
    }
    (out, quote)
}

fn push_space_aware(out: &mut String, c: char) {
    if c == ' ' && out.ends_with(' ') {
        return;
    }
    out.push(c);
}
