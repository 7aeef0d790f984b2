//! Parser for CAT-style token-level XML: a flat `<token>` list carrying
//! sentence/position indices, a `<Markables>` block anchoring annotations to
//! tokens, and a `<Relations>` block linking markables.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use super::{Corpus, CorpusError, Document, EventMention, LinkKey, Sentence, TokenSpan};

pub(crate) struct CatDialect {
    /// Is this markable tag an event mention?
    pub is_event_tag: fn(&str) -> bool,
    /// Is this relation tag a causal link?
    pub is_causal_link_tag: fn(&str) -> bool,
    /// Derive the topic id from the document name, when the corpus has topics.
    pub topic_from_doc_name: fn(&str) -> Option<String>,
}

pub(crate) const ESC_DIALECT: CatDialect = CatDialect {
    is_event_tag: |tag| tag.starts_with("ACTION_") || tag.starts_with("NEG_ACTION_"),
    is_causal_link_tag: |tag| tag == "PLOT_LINK",
    // Document names look like "3_2ecbplus.xml": the topic number is the
    // prefix before the first underscore.
    topic_from_doc_name: |name| {
        let prefix = name.split('_').next()?;
        prefix.parse::<u64>().ok().map(|n| n.to_string())
    },
};

pub(crate) const CTB_CAT_DIALECT: CatDialect = CatDialect {
    is_event_tag: |tag| tag == "EVENT",
    is_causal_link_tag: |tag| tag == "CLINK",
    topic_from_doc_name: |_| None,
};

/// Parse one document of the token-anchored CAT markup.
pub fn parse_esc_document(xml_bytes: &[u8]) -> Result<Document, CorpusError> {
    parse_cat_document(xml_bytes, &ESC_DIALECT)
}

pub(crate) fn parse_cat_document(
    xml_bytes: &[u8],
    dialect: &CatDialect,
) -> Result<Document, CorpusError> {
    let text = std::str::from_utf8(xml_bytes).map_err(|e| CorpusError::InvalidValue {
        element: "document".into(),
        reason: format!("not valid UTF-8: {e}"),
    })?;
    let tree = roxmltree::Document::parse(text)?;
    let root = tree.root_element();

    let doc_name = root
        .attribute("doc_name")
        .or_else(|| root.attribute("doc_id"))
        .ok_or_else(|| CorpusError::MissingAttribute {
            element: root.tag_name().name().to_string(),
            attribute: "doc_name".into(),
        })?
        .to_string();

    // Token table: t_id -> (sentence, position-in-sentence, text).
    let mut token_table: BTreeMap<String, (usize, usize, String)> = BTreeMap::new();
    let mut sentence_tokens: BTreeMap<usize, Vec<(usize, String)>> = BTreeMap::new();
    for token in root.children().filter(|n| n.has_tag_name("token")) {
        let t_id = required_attr(&token, "t_id")?;
        let sentence = parse_usize(&token, "sentence")?;
        let number = parse_usize(&token, "number")?;
        let word = token.text().unwrap_or("").trim().to_string();
        if word.is_empty() {
            continue;
        }
        token_table.insert(t_id.clone(), (sentence, number, word.clone()));
        sentence_tokens.entry(sentence).or_default().push((number, word));
    }

    let sentences: Vec<Sentence> = sentence_tokens
        .into_iter()
        .map(|(index, mut toks)| {
            toks.sort_by_key(|(n, _)| *n);
            Sentence { index, tokens: toks.into_iter().map(|(_, w)| w).collect() }
        })
        .collect();

    // Markables: remember every id so link validation can distinguish a
    // dangling reference from a reference to a non-event markable.
    let mut all_markable_ids: BTreeSet<String> = BTreeSet::new();
    let mut mentions: Vec<EventMention> = Vec::new();
    let mut event_ids: BTreeSet<String> = BTreeSet::new();
    if let Some(markables) = root.children().find(|n| n.has_tag_name("Markables")) {
        for markable in markables.children().filter(|n| n.is_element()) {
            let m_id = required_attr(&markable, "m_id")?;
            all_markable_ids.insert(m_id.clone());
            if !(dialect.is_event_tag)(markable.tag_name().name()) {
                continue;
            }
            let mut anchors: Vec<(usize, usize)> = Vec::new();
            for anchor in markable.children().filter(|n| n.has_tag_name("token_anchor")) {
                let t_id = required_attr(&anchor, "t_id")?;
                let (sentence, number, _) =
                    token_table.get(&t_id).ok_or_else(|| CorpusError::DanglingReference {
                        kind: "token_anchor".into(),
                        id: t_id.clone(),
                    })?;
                anchors.push((*sentence, *number));
            }
            if anchors.is_empty() {
                continue; // cross-document or empty markables carry no anchors
            }
            let sentence_index = anchors[0].0;
            if anchors.iter().any(|(s, _)| *s != sentence_index) {
                continue; // cannot be modeled as a single-sentence span
            }
            let start = anchors.iter().map(|(_, n)| *n).min().unwrap();
            let end = anchors.iter().map(|(_, n)| *n).max().unwrap() + 1;
            let sentence = sentences
                .iter()
                .find(|s| s.index == sentence_index)
                .ok_or_else(|| CorpusError::DanglingReference {
                    kind: "sentence".into(),
                    id: sentence_index.to_string(),
                })?;
            let surface = sentence.tokens[start..end].join(" ");
            event_ids.insert(m_id.clone());
            mentions.push(EventMention {
                mention_id: m_id,
                sentence_index,
                span: TokenSpan::new(start, end),
                surface,
            });
        }
    }

    let mut causal_links: BTreeSet<LinkKey> = BTreeSet::new();
    if let Some(relations) = root.children().find(|n| n.has_tag_name("Relations")) {
        for relation in relations.children().filter(|n| n.is_element()) {
            if !(dialect.is_causal_link_tag)(relation.tag_name().name()) {
                continue;
            }
            let source = child_m_id(&relation, "source")?;
            let target = child_m_id(&relation, "target")?;
            for id in [&source, &target] {
                if !all_markable_ids.contains(id) {
                    return Err(CorpusError::DanglingReference {
                        kind: "relation markable".into(),
                        id: (*id).clone(),
                    });
                }
            }
            // Links touching non-event markables (or events we could not
            // anchor) are dropped rather than failing the document.
            if !event_ids.contains(&source) || !event_ids.contains(&target) || source == target {
                continue;
            }
            causal_links.insert(LinkKey::new(source, target));
        }
    }

    let doc = Document {
        doc_id: doc_name.clone(),
        topic_id: (dialect.topic_from_doc_name)(&doc_name),
        sentences,
        mentions,
        causal_links,
    };
    doc.validate()?;
    Ok(doc)
}

fn required_attr(node: &roxmltree::Node, name: &str) -> Result<String, CorpusError> {
    node.attribute(name).map(str::to_string).ok_or_else(|| CorpusError::MissingAttribute {
        element: node.tag_name().name().to_string(),
        attribute: name.to_string(),
    })
}

fn parse_usize(node: &roxmltree::Node, name: &str) -> Result<usize, CorpusError> {
    let raw = required_attr(node, name)?;
    raw.parse().map_err(|_| CorpusError::InvalidValue {
        element: node.tag_name().name().to_string(),
        reason: format!("attribute '{name}' is not a non-negative integer: '{raw}'"),
    })
}

fn child_m_id(relation: &roxmltree::Node, child: &str) -> Result<String, CorpusError> {
    let node = relation
        .children()
        .find(|n| n.has_tag_name(child))
        .ok_or_else(|| CorpusError::MissingAttribute {
            element: relation.tag_name().name().to_string(),
            attribute: format!("<{child}> child"),
        })?;
    required_attr(&node, "m_id")
}

/// Parse every `.xml` file under `dir` (recursively, in sorted path order).
pub fn parse_esc_dir(dir: &Path) -> Result<Corpus, CorpusError> {
    let mut documents = Vec::new();
    for path in xml_files_under(dir)? {
        let bytes = std::fs::read(&path)?;
        let doc = parse_esc_document(&bytes).map_err(|e| annotate_path(e, &path))?;
        documents.push(doc);
    }
    Ok(Corpus::new(documents))
}

pub(crate) fn xml_files_under(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let mut files = Vec::new();
    collect_xml_files(dir, &mut files)?;
    files.sort();
    Ok(files)
}

fn collect_xml_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CorpusError> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        let name = entry.file_name();
        if name.to_string_lossy().starts_with('.') {
            continue;
        }
        if path.is_dir() {
            collect_xml_files(&path, out)?;
        } else if matches!(
            path.extension().and_then(|e| e.to_str()),
            Some("xml") | Some("tml")
        ) {
            out.push(path);
        }
    }
    Ok(())
}

pub(crate) fn annotate_path(err: CorpusError, path: &Path) -> CorpusError {
    match err {
        CorpusError::InvalidDocument { doc_id, reason } => CorpusError::InvalidDocument {
            doc_id,
            reason: format!("{reason} (file {})", path.display()),
        },
        CorpusError::Xml(e) => CorpusError::InvalidValue {
            element: "document".into(),
            reason: format!("{e} (file {})", path.display()),
        },
        other => other,
    }
}
