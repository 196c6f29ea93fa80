//! Converter from TEI-style XML (as emitted by academic PDF parsers) to the
//! native document schema.

use std::fs;
use std::path::Path;

use quick_xml::events::Event;
use quick_xml::Reader;

use super::{Section, StructuredPaperDocument};
use crate::error::{Error, Result};

pub fn convert_tei(path: &Path) -> Result<StructuredPaperDocument> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    convert_tei_str(&text).map_err(|e| match e {
        Error::Validation(m) => Error::validation(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Default)]
struct Pending {
    heading: Option<String>,
    div_type: Option<String>,
    paragraphs: Vec<String>,
}

/// Collects `<div>` elements with their `<head>` and `<p>` children from the
/// abstract, body and back matter. A back-matter div without a head is named
/// after its `type` attribute so it still classifies (references,
/// acknowledgements, annexes).
pub fn convert_tei_str(xml: &str) -> Result<StructuredPaperDocument> {
    let mut reader = Reader::from_str(xml);
    let mut path: Vec<String> = Vec::new();
    let mut title = String::new();
    let mut sections = Vec::new();
    let mut divs: Vec<Pending> = Vec::new();
    let mut text_buf: Option<String> = None;
    let mut in_abstract = false;

    loop {
        let ev = reader
            .read_event()
            .map_err(|e| Error::validation(format!("TEI parse error at byte {}: {e}", reader.buffer_position())))?;
        match ev {
            Event::Start(e) => {
                let name = String::from_utf8_lossy(e.local_name().as_ref()).into_owned();
                match name.as_str() {
                    "abstract" => {
                        in_abstract = true;
                        divs.push(Pending {
                            heading: Some("Abstract".into()),
                            ..Default::default()
                        });
                    }
                    "div" => {
                        let div_type = e
                            .attributes()
                            .flatten()
                            .find(|a| a.key.local_name().as_ref() == b"type")
                            .map(|a| String::from_utf8_lossy(&a.value).into_owned());
                        if !in_abstract {
                            divs.push(Pending {
                                div_type,
                                ..Default::default()
                            });
                        }
                    }
                    "head" | "p" if !divs.is_empty() => text_buf = Some(String::new()),
                    "title" if title.is_empty() && path.iter().any(|p| p == "titleStmt") => {
                        text_buf = Some(String::new())
                    }
                    _ => {}
                }
                path.push(name);
            }
            Event::End(e) => {
                let name = String::from_utf8_lossy(e.local_name().as_ref()).into_owned();
                path.pop();
                match name.as_str() {
                    "head" | "p" => {
                        if let (Some(buf), Some(div)) = (text_buf.take(), divs.last_mut()) {
                            let t = buf.split_whitespace().collect::<Vec<_>>().join(" ");
                            if name == "head" {
                                div.heading = Some(t);
                            } else if !t.is_empty() {
                                div.paragraphs.push(t);
                            }
                        }
                    }
                    "title" => {
                        if let Some(buf) = text_buf.take() {
                            title = buf.split_whitespace().collect::<Vec<_>>().join(" ");
                        }
                    }
                    "div" if !in_abstract => {
                        if let Some(d) = divs.pop() {
                            match divs.last_mut() {
                                // Untyped, headless inner divs belong to their parent.
                                Some(parent) if d.heading.is_none() && d.div_type.is_none() => {
                                    parent.paragraphs.extend(d.paragraphs)
                                }
                                _ => flush(d, &mut sections),
                            }
                        }
                    }
                    "abstract" => {
                        in_abstract = false;
                        if let Some(d) = divs.pop() {
                            flush(d, &mut sections);
                        }
                    }
                    _ => {}
                }
            }
            Event::Text(t) => {
                if let Some(buf) = text_buf.as_mut() {
                    let s = t
                        .unescape()
                        .map_err(|e| Error::validation(format!("TEI text: {e}")))?;
                    buf.push_str(&s);
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if sections.is_empty() {
        return Err(Error::validation("TEI document has no sections"));
    }
    Ok(StructuredPaperDocument { title, sections })
}

fn flush(d: Pending, sections: &mut Vec<Section>) {
    let heading = match (d.heading, d.div_type) {
        (Some(h), _) if !h.is_empty() => h,
        (_, Some(t)) => match t.as_str() {
            "acknowledgement" | "acknowledgements" => "Acknowledgements".into(),
            "annex" => "Appendix".into(),
            "references" => "References".into(),
            other => other.to_string(),
        },
        _ => String::new(),
    };
    if heading.is_empty() && d.paragraphs.is_empty() {
        return;
    }
    sections.push(Section {
        heading: if heading.is_empty() { "Untitled".into() } else { heading },
        paragraphs: d.paragraphs,
    });
}
