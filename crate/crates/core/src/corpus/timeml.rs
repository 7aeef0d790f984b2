//! Parser for TimeML documents with CLINK causal annotations.
//!
//! The official release ships two layouts: inline TimeML (`<TEXT>` with
//! `<EVENT>` elements, `<MAKEINSTANCE>` records and `<CLINK>` relations) and
//! the token-anchored CAT layout. Both are accepted here; the layout is
//! detected from the root element.

use std::collections::BTreeMap;
use std::path::Path;

use super::esc::{annotate_path, parse_cat_document, xml_files_under, CTB_CAT_DIALECT};
use super::{Corpus, CorpusError, Document, EventMention, LinkKey, Sentence, TokenSpan};

pub fn parse_ctb_document(xml_bytes: &[u8]) -> Result<Document, CorpusError> {
    let text = std::str::from_utf8(xml_bytes).map_err(|e| CorpusError::InvalidValue {
        element: "document".into(),
        reason: format!("not valid UTF-8: {e}"),
    })?;
    let tree = roxmltree::Document::parse(text)?;
    let root_name = tree.root_element().tag_name().name().to_string();
    match root_name.as_str() {
        "TimeML" => parse_inline_timeml(&tree),
        "Document" => parse_cat_document(xml_bytes, &CTB_CAT_DIALECT),
        other => Err(CorpusError::InvalidValue {
            element: other.to_string(),
            reason: "expected a TimeML or CAT Document root".into(),
        }),
    }
}

fn parse_inline_timeml(tree: &roxmltree::Document) -> Result<Document, CorpusError> {
    let root = tree.root_element();
    let doc_id = root
        .children()
        .find(|n| n.has_tag_name("DOCID"))
        .and_then(|n| n.text())
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .ok_or_else(|| CorpusError::MissingAttribute {
            element: "TimeML".into(),
            attribute: "<DOCID> child".into(),
        })?;

    let text_node = root.children().find(|n| n.has_tag_name("TEXT")).ok_or_else(|| {
        CorpusError::MissingAttribute { element: "TimeML".into(), attribute: "<TEXT> child".into() }
    })?;

    // Token stream tagged with the enclosing event id, grouped by sentence.
    let mut builder = SentenceBuilder::default();
    let explicit_sentences: Vec<roxmltree::Node> =
        text_node.children().filter(|n| n.has_tag_name("s")).collect();
    if explicit_sentences.is_empty() {
        builder.heuristic_breaks = true;
        walk_mixed(&text_node, None, &mut builder);
        builder.finish_sentence();
    } else {
        for s in explicit_sentences {
            walk_mixed(&s, None, &mut builder);
            builder.finish_sentence();
        }
    }
    let (sentences, event_tokens) = builder.into_parts();

    let mut mentions = Vec::new();
    for (eid, positions) in &event_tokens {
        let sentence_index = positions[0].0;
        if positions.iter().any(|(s, _)| *s != sentence_index) {
            continue; // not representable as a single-sentence span
        }
        let start = positions.iter().map(|(_, p)| *p).min().unwrap();
        let end = positions.iter().map(|(_, p)| *p).max().unwrap() + 1;
        let sentence = &sentences[sentence_index];
        mentions.push(EventMention {
            mention_id: eid.clone(),
            sentence_index,
            span: TokenSpan::new(start, end),
            surface: sentence.tokens[start..end].join(" "),
        });
    }
    mentions.sort_by(|a, b| a.mention_id.cmp(&b.mention_id));

    // eiid -> eid via MAKEINSTANCE records.
    let mut instance_to_event: BTreeMap<String, String> = BTreeMap::new();
    for mi in root.children().filter(|n| n.has_tag_name("MAKEINSTANCE")) {
        let eiid = attr(&mi, "eiid")?;
        let event_id = attr(&mi, "eventID")?;
        instance_to_event.insert(eiid, event_id);
    }

    let mut causal_links = std::collections::BTreeSet::new();
    for clink in root.children().filter(|n| n.has_tag_name("CLINK")) {
        let a = resolve_clink_endpoint(&clink, "eventInstanceID", "eventID", &instance_to_event)?;
        let b = resolve_clink_endpoint(
            &clink,
            "relatedToEventInstance",
            "relatedToEvent",
            &instance_to_event,
        )?;
        for id in [&a, &b] {
            if !mentions.iter().any(|m| &m.mention_id == id) {
                return Err(CorpusError::DanglingReference {
                    kind: "CLINK event".into(),
                    id: id.clone(),
                });
            }
        }
        if a != b {
            causal_links.insert(LinkKey::new(a, b));
        }
    }

    let doc = Document { doc_id, topic_id: None, sentences, mentions, causal_links };
    doc.validate()?;
    Ok(doc)
}

fn attr(node: &roxmltree::Node, name: &str) -> Result<String, CorpusError> {
    node.attribute(name).map(str::to_string).ok_or_else(|| CorpusError::MissingAttribute {
        element: node.tag_name().name().to_string(),
        attribute: name.to_string(),
    })
}

fn resolve_clink_endpoint(
    clink: &roxmltree::Node,
    instance_attr: &str,
    event_attr: &str,
    instance_to_event: &BTreeMap<String, String>,
) -> Result<String, CorpusError> {
    if let Some(eiid) = clink.attribute(instance_attr) {
        return instance_to_event.get(eiid).cloned().ok_or_else(|| {
            CorpusError::DanglingReference { kind: "event instance".into(), id: eiid.to_string() }
        });
    }
    if let Some(eid) = clink.attribute(event_attr) {
        return Ok(eid.to_string());
    }
    Err(CorpusError::MissingAttribute {
        element: "CLINK".into(),
        attribute: instance_attr.to_string(),
    })
}

#[derive(Default)]
struct SentenceBuilder {
    sentences: Vec<Sentence>,
    current: Vec<String>,
    /// eid -> (sentence index, token position) per event token.
    event_tokens: BTreeMap<String, Vec<(usize, usize)>>,
    pending_break: bool,
    /// Break on terminal punctuation; off when explicit <s> tags exist.
    heuristic_breaks: bool,
}

impl SentenceBuilder {
    fn push_token(&mut self, token: String, event: Option<&str>) {
        if self.pending_break {
            if is_sentence_closer(&token) {
                // trailing quotes/brackets stay with the sentence they close
            } else {
                self.finish_sentence();
            }
        }
        if self.heuristic_breaks && is_sentence_terminal(&token) {
            self.pending_break = true;
        } else if self.pending_break && !is_sentence_closer(&token) {
            self.pending_break = false;
        }
        if let Some(eid) = event {
            self.event_tokens
                .entry(eid.to_string())
                .or_default()
                .push((self.sentences.len(), self.current.len()));
        }
        self.current.push(token);
    }

    fn finish_sentence(&mut self) {
        self.pending_break = false;
        if self.current.is_empty() {
            return;
        }
        let index = self.sentences.len();
        self.sentences.push(Sentence { index, tokens: std::mem::take(&mut self.current) });
    }

    fn into_parts(mut self) -> (Vec<Sentence>, BTreeMap<String, Vec<(usize, usize)>>) {
        self.finish_sentence();
        (self.sentences, self.event_tokens)
    }
}

fn is_sentence_terminal(token: &str) -> bool {
    matches!(token, "." | "!" | "?")
}

fn is_sentence_closer(token: &str) -> bool {
    matches!(token, "\"" | "'" | "''" | ")" | "]" | "\u{201d}" | "\u{2019}")
}

/// Depth-first walk over mixed content; tokens inside an `<EVENT>` element
/// carry its eid.
fn walk_mixed(node: &roxmltree::Node, enclosing_event: Option<&str>, out: &mut SentenceBuilder) {
    for child in node.children() {
        if child.is_text() {
            for token in tokenize_chunk(child.text().unwrap_or("")) {
                out.push_token(token, enclosing_event);
            }
        } else if child.is_element() {
            let event = if child.has_tag_name("EVENT") {
                child.attribute("eid").or(enclosing_event)
            } else {
                enclosing_event
            };
            walk_mixed(&child, event, out);
        }
    }
}

/// Whitespace split with leading/trailing punctuation peeled off as
/// standalone tokens.
fn tokenize_chunk(chunk: &str) -> Vec<String> {
    let mut out = Vec::new();
    for piece in chunk.split_whitespace() {
        let mut leading = Vec::new();
        let mut trailing = Vec::new();
        let mut core = piece;
        while let Some(c) = core.chars().next() {
            if is_leading_punct(c) {
                leading.push(c.to_string());
                core = &core[c.len_utf8()..];
            } else {
                break;
            }
        }
        while let Some(c) = core.chars().last() {
            if is_trailing_punct(c) {
                trailing.push(c.to_string());
                core = &core[..core.len() - c.len_utf8()];
            } else {
                break;
            }
        }
        out.extend(leading);
        if !core.is_empty() {
            out.push(core.to_string());
        }
        out.extend(trailing.into_iter().rev());
    }
    out
}

fn is_leading_punct(c: char) -> bool {
    matches!(c, '(' | '[' | '"' | '\'' | '\u{201c}' | '\u{2018}')
}

fn is_trailing_punct(c: char) -> bool {
    matches!(
        c,
        '.' | ',' | ';' | ':' | '!' | '?' | '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}' | '%'
    )
}

/// Parse every `.xml`/`.tml` file under `dir` (recursively, sorted order).
pub fn parse_ctb_dir(dir: &Path) -> Result<Corpus, CorpusError> {
    let mut documents = Vec::new();
    for path in xml_files_under(dir)? {
        let bytes = std::fs::read(&path)?;
        let doc = parse_ctb_document(&bytes).map_err(|e| annotate_path(e, &path))?;
        documents.push(doc);
    }
    Ok(Corpus::new(documents))
}
