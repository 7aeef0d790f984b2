//! Normalized corpus model: parsed documents with event mentions and causal
//! links, derived event-pair instances, cross-validation fold planning, and
//! corpus statistics.
//!
//! Two parsers feed this model: CAT-style token markup ([`esc`]) and TimeML
//! with CLINK annotations ([`timeml`]). Both produce the same [`Document`]
//! shape, which round-trips through a JSON-lines interchange file so the
//! rest of the pipeline never touches raw XML.

pub mod esc;
pub mod timeml;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("xml parse error: {0}")]
    Xml(#[from] roxmltree::Error),
    #[error("element <{element}> is missing required attribute '{attribute}'")]
    MissingAttribute { element: String, attribute: String },
    #[error("dangling {kind} reference: '{id}'")]
    DanglingReference { kind: String, id: String },
    #[error("invalid value in <{element}>: {reason}")]
    InvalidValue { element: String, reason: String },
    #[error("document '{doc_id}' failed validation: {reason}")]
    InvalidDocument { doc_id: String, reason: String },
    #[error("fold scheme mismatch: {0}")]
    SchemeMismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Token-index range within one sentence, end-exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub tokens: Vec<String>,
}

impl Sentence {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventMention {
    pub mention_id: String,
    pub sentence_index: usize,
    pub span: TokenSpan,
    pub surface: String,
}

/// Unordered pair of mention ids, stored in sorted order so set membership
/// is direction-free.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkKey(String, String);

impl LinkKey {
    pub fn new(a: impl Into<String>, b: impl Into<String>) -> Self {
        let a = a.into();
        let b = b.into();
        if a <= b {
            Self(a, b)
        } else {
            Self(b, a)
        }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.0 == id || self.1 == id
    }

    pub fn ids(&self) -> (&str, &str) {
        (&self.0, &self.1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub topic_id: Option<String>,
    pub sentences: Vec<Sentence>,
    pub mentions: Vec<EventMention>,
    pub causal_links: BTreeSet<LinkKey>,
}

impl Document {
    pub fn mention(&self, id: &str) -> Option<&EventMention> {
        self.mentions.iter().find(|m| m.mention_id == id)
    }

    pub fn sentence(&self, index: usize) -> Option<&Sentence> {
        self.sentences.iter().find(|s| s.index == index)
    }

    /// Checks every structural invariant; parsers call this before handing
    /// a document out.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |reason: String| CorpusError::InvalidDocument {
            doc_id: self.doc_id.clone(),
            reason,
        };
        let mut seen_ids = BTreeSet::new();
        for m in &self.mentions {
            if !seen_ids.insert(&m.mention_id) {
                return Err(fail(format!("duplicate mention id '{}'", m.mention_id)));
            }
            let sentence = self
                .sentence(m.sentence_index)
                .ok_or_else(|| fail(format!(
                    "mention '{}' references missing sentence {}",
                    m.mention_id, m.sentence_index
                )))?;
            if m.span.is_empty() {
                return Err(fail(format!("mention '{}' has an empty span", m.mention_id)));
            }
            if m.span.end > sentence.tokens.len() {
                return Err(fail(format!(
                    "mention '{}' span {}..{} exceeds sentence {} length {}",
                    m.mention_id,
                    m.span.start,
                    m.span.end,
                    m.sentence_index,
                    sentence.tokens.len()
                )));
            }
            let expected = sentence.tokens[m.span.start..m.span.end].join(" ");
            if expected != m.surface {
                return Err(fail(format!(
                    "mention '{}' surface '{}' does not match sentence tokens '{}'",
                    m.mention_id, m.surface, expected
                )));
            }
        }
        for link in &self.causal_links {
            let (a, b) = link.ids();
            if a == b {
                return Err(fail(format!("self-link on mention '{a}'")));
            }
            for id in [a, b] {
                if !seen_ids.contains(&id.to_string()) {
                    return Err(CorpusError::DanglingReference {
                        kind: "causal link mention".into(),
                        id: id.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Mentions in document order: sentence, then span position.
    pub fn mentions_in_order(&self) -> Vec<&EventMention> {
        let mut out: Vec<&EventMention> = self.mentions.iter().collect();
        out.sort_by(|a, b| {
            (a.sentence_index, a.span.start, a.span.end, &a.mention_id).cmp(&(
                b.sentence_index,
                b.span.start,
                b.span.end,
                &b.mention_id,
            ))
        });
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairScope {
    Intra,
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    Causal,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeFilter {
    Intra,
    Cross,
    Both,
}

impl ScopeFilter {
    pub fn admits(&self, scope: PairScope) -> bool {
        matches!(
            (self, scope),
            (ScopeFilter::Both, _)
                | (ScopeFilter::Intra, PairScope::Intra)
                | (ScopeFilter::Cross, PairScope::Cross)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventPairInstance {
    pub instance_id: String,
    pub doc_id: String,
    pub e1: String,
    pub e2: String,
    pub scope: PairScope,
    pub label: PairLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(mut documents: Vec<Document>) -> Self {
        documents.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        Self { documents }
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.doc_id == doc_id)
    }

    /// One JSON document per line, stable field order.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), CorpusError> {
        for doc in &self.documents {
            serde_json::to_writer(&mut w, doc)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, CorpusError> {
        let mut documents = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document = serde_json::from_str(&line)?;
            doc.validate()?;
            documents.push(doc);
        }
        Ok(Self::new(documents))
    }

    pub fn load_jsonl(path: &Path) -> Result<Self, CorpusError> {
        let file = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(file))
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let file = std::fs::File::create(path)?;
        self.write_jsonl(std::io::BufWriter::new(file))
    }
}

/// All unordered same-document mention pairs passing the scope filter, each
/// labeled against the document's causal links. Output order is
/// (doc_id, e1 position, e2 position).
pub fn build_pair_instances(corpus: &Corpus, scope_filter: ScopeFilter) -> Vec<EventPairInstance> {
    let mut out = Vec::new();
    let mut docs: Vec<&Document> = corpus.documents.iter().collect();
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    for doc in docs {
        let ordered = doc.mentions_in_order();
        for i in 0..ordered.len() {
            for j in i + 1..ordered.len() {
                let (e1, e2) = (ordered[i], ordered[j]);
                let scope = if e1.sentence_index == e2.sentence_index {
                    PairScope::Intra
                } else {
                    PairScope::Cross
                };
                if !scope_filter.admits(scope) {
                    continue;
                }
                let key = LinkKey::new(e1.mention_id.clone(), e2.mention_id.clone());
                let label = if doc.causal_links.contains(&key) {
                    PairLabel::Causal
                } else {
                    PairLabel::None
                };
                out.push(EventPairInstance {
                    instance_id: format!("{}#{}#{}", doc.doc_id, e1.mention_id, e2.mention_id),
                    doc_id: doc.doc_id.clone(),
                    e1: e1.mention_id.clone(),
                    e2: e2.mention_id.clone(),
                    scope,
                    label,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FoldScheme {
    #[serde(rename = "esc_5fold")]
    Esc5Fold,
    #[serde(rename = "ctb_10fold")]
    Ctb10Fold,
}

impl FoldScheme {
    pub fn fold_count(&self) -> usize {
        match self {
            FoldScheme::Esc5Fold => 5,
            FoldScheme::Ctb10Fold => 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldUnit {
    Topic,
    Document,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_unit_ids: Vec<String>,
    pub test_unit_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub scheme: FoldScheme,
    pub unit: FoldUnit,
    pub dev_unit_ids: Vec<String>,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    /// Document ids belonging to the given unit ids.
    pub fn docs_for_units<'c>(&self, corpus: &'c Corpus, unit_ids: &[String]) -> Vec<&'c Document> {
        let wanted: BTreeSet<&String> = unit_ids.iter().collect();
        corpus
            .documents
            .iter()
            .filter(|d| match self.unit {
                FoldUnit::Topic => d
                    .topic_id
                    .as_ref()
                    .map(|t| wanted.contains(t))
                    .unwrap_or(false),
                FoldUnit::Document => wanted.contains(&d.doc_id),
            })
            .collect()
    }
}

pub fn make_folds(corpus: &Corpus, scheme: FoldScheme, seed: u64) -> Result<FoldPlan, CorpusError> {
    make_folds_with_dev(corpus, scheme, seed, None)
}

/// Topic-level plan for the 5-fold scheme (dev = the two highest-numbered
/// topics), document-level plan for the 10-fold scheme (no dev unless
/// `dev_fraction` is given).
pub fn make_folds_with_dev(
    corpus: &Corpus,
    scheme: FoldScheme,
    seed: u64,
    dev_fraction: Option<f64>,
) -> Result<FoldPlan, CorpusError> {
    match scheme {
        FoldScheme::Esc5Fold => {
            let mut topics: Vec<String> = corpus
                .documents
                .iter()
                .map(|d| {
                    d.topic_id.clone().ok_or_else(|| {
                        CorpusError::SchemeMismatch(format!(
                            "esc_5fold requires topic ids, document '{}' has none",
                            d.doc_id
                        ))
                    })
                })
                .collect::<Result<BTreeSet<_>, _>>()?
                .into_iter()
                .collect();
            topics.sort_by_key(|t| topic_sort_key(t));
            if topics.len() < 3 {
                return Err(CorpusError::SchemeMismatch(format!(
                    "esc_5fold needs more than {} topics",
                    topics.len()
                )));
            }
            let dev_unit_ids = topics.split_off(topics.len() - 2);
            let folds = partition_into_folds(topics, 5, seed);
            Ok(FoldPlan { scheme, unit: FoldUnit::Topic, dev_unit_ids, folds })
        }
        FoldScheme::Ctb10Fold => {
            let mut doc_ids: Vec<String> =
                corpus.documents.iter().map(|d| d.doc_id.clone()).collect();
            doc_ids.sort();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC7B1_0F01);
            let dev_unit_ids = match dev_fraction {
                Some(f) if f > 0.0 => {
                    let n_dev = ((doc_ids.len() as f64) * f).round() as usize;
                    let n_dev = n_dev.min(doc_ids.len().saturating_sub(10));
                    doc_ids.shuffle(&mut rng);
                    let dev = doc_ids.split_off(doc_ids.len() - n_dev);
                    doc_ids.sort();
                    dev
                }
                _ => Vec::new(),
            };
            let folds = partition_into_folds(doc_ids, 10, seed);
            Ok(FoldPlan { scheme, unit: FoldUnit::Document, dev_unit_ids, folds })
        }
    }
}

/// Shuffle deterministically, then deal units into `k` near-equal test sets;
/// each fold trains on every non-dev unit outside its own test set.
fn partition_into_folds(mut units: Vec<String>, k: usize, seed: u64) -> Vec<Fold> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    units.shuffle(&mut rng);
    let n = units.len();
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut offset = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        let test: Vec<String> = units[offset..offset + size].to_vec();
        offset += size;
        let mut train: Vec<String> =
            units.iter().filter(|u| !test.contains(u)).cloned().collect();
        train.sort();
        let mut test = test;
        test.sort();
        folds.push(Fold { train_unit_ids: train, test_unit_ids: test });
    }
    folds
}

/// Numeric topic ids sort numerically; anything else sorts after, by name.
fn topic_sort_key(topic: &str) -> (u64, String) {
    match topic.parse::<u64>() {
        Ok(n) => (n, String::new()),
        Err(_) => (u64::MAX, topic.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub n_topics: usize,
    pub n_mentions: usize,
    pub n_causal_pairs: usize,
    pub n_causal_intra: usize,
    pub n_causal_cross: usize,
    pub n_candidate_pairs: usize,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut stats = CorpusStats {
        n_docs: corpus.documents.len(),
        n_topics: 0,
        n_mentions: 0,
        n_causal_pairs: 0,
        n_causal_intra: 0,
        n_causal_cross: 0,
        n_candidate_pairs: 0,
    };
    let mut topics = BTreeSet::new();
    for doc in &corpus.documents {
        if let Some(t) = &doc.topic_id {
            topics.insert(t.clone());
        }
        stats.n_mentions += doc.mentions.len();
        let m = doc.mentions.len();
        stats.n_candidate_pairs += m * m.saturating_sub(1) / 2;
        let by_id: BTreeMap<&str, &EventMention> =
            doc.mentions.iter().map(|m| (m.mention_id.as_str(), m)).collect();
        for link in &doc.causal_links {
            let (a, b) = link.ids();
            stats.n_causal_pairs += 1;
            let (ma, mb) = (by_id[a], by_id[b]);
            if ma.sentence_index == mb.sentence_index {
                stats.n_causal_intra += 1;
            } else {
                stats.n_causal_cross += 1;
            }
        }
    }
    stats.n_topics = topics.len();
    stats
}

impl CorpusStats {
    /// Aligned two-column table for terminal output.
    pub fn to_table(&self) -> String {
        let rows = [
            ("documents", self.n_docs),
            ("topics", self.n_topics),
            ("event mentions", self.n_mentions),
            ("causal pairs", self.n_causal_pairs),
            ("  intra-sentence", self.n_causal_intra),
            ("  cross-sentence", self.n_causal_cross),
            ("candidate pairs", self.n_candidate_pairs),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<width$}  {v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_sentence_doc() -> Document {
        Document {
            doc_id: "doc1".into(),
            topic_id: Some("3".into()),
            sentences: vec![
                Sentence {
                    index: 0,
                    tokens: ["A", "storm", "hit", "the", "coast", "."]
                        .map(String::from)
                        .to_vec(),
                },
                Sentence {
                    index: 1,
                    tokens: ["Thousands", "fled", "their", "homes", "."]
                        .map(String::from)
                        .to_vec(),
                },
            ],
            mentions: vec![
                EventMention {
                    mention_id: "m1".into(),
                    sentence_index: 0,
                    span: TokenSpan::new(2, 3),
                    surface: "hit".into(),
                },
                EventMention {
                    mention_id: "m2".into(),
                    sentence_index: 1,
                    span: TokenSpan::new(1, 2),
                    surface: "fled".into(),
                },
                EventMention {
                    mention_id: "m3".into(),
                    sentence_index: 0,
                    span: TokenSpan::new(1, 2),
                    surface: "storm".into(),
                },
            ],
            causal_links: [LinkKey::new("m1", "m2")].into_iter().collect(),
        }
    }

    #[test]
    fn validate_accepts_good_document() {
        two_sentence_doc().validate().unwrap();
    }

    #[test]
    fn validate_rejects_bad_surface_and_dangling_link() {
        let mut doc = two_sentence_doc();
        doc.mentions[0].surface = "missed".into();
        assert!(matches!(doc.validate(), Err(CorpusError::InvalidDocument { .. })));

        let mut doc = two_sentence_doc();
        doc.causal_links.insert(LinkKey::new("m1", "zz"));
        assert!(matches!(doc.validate(), Err(CorpusError::DanglingReference { .. })));

        let mut doc = two_sentence_doc();
        doc.mentions[0].span = TokenSpan::new(4, 9);
        assert!(doc.validate().is_err());
    }

    #[test]
    fn pair_instances_enumerate_and_label() {
        let corpus = Corpus::new(vec![two_sentence_doc()]);
        let all = build_pair_instances(&corpus, ScopeFilter::Both);
        // 3 mentions -> C(3,2) = 3 pairs.
        assert_eq!(all.len(), 3);
        let causal: Vec<_> =
            all.iter().filter(|i| i.label == PairLabel::Causal).collect();
        assert_eq!(causal.len(), 1);
        assert_eq!(causal[0].scope, PairScope::Cross);
        // Canonical ordering: e1 before e2 in document order.
        for inst in &all {
            let doc = corpus.document(&inst.doc_id).unwrap();
            let m1 = doc.mention(&inst.e1).unwrap();
            let m2 = doc.mention(&inst.e2).unwrap();
            assert!(
                (m1.sentence_index, m1.span.start) <= (m2.sentence_index, m2.span.start)
            );
        }

        let intra = build_pair_instances(&corpus, ScopeFilter::Intra);
        assert_eq!(intra.len(), 1); // m3-m1 in sentence 0
        assert!(intra.iter().all(|i| i.label == PairLabel::None));

        let empty = build_pair_instances(&Corpus::new(vec![]), ScopeFilter::Both);
        assert!(empty.is_empty());
    }

    #[test]
    fn three_mentions_one_sentence_intra_count() {
        let doc = Document {
            doc_id: "d".into(),
            topic_id: None,
            sentences: vec![Sentence {
                index: 0,
                tokens: ["a", "b", "c"].map(String::from).to_vec(),
            }],
            mentions: (0..3)
                .map(|i| EventMention {
                    mention_id: format!("m{i}"),
                    sentence_index: 0,
                    span: TokenSpan::new(i, i + 1),
                    surface: ["a", "b", "c"][i].into(),
                })
                .collect(),
            causal_links: BTreeSet::new(),
        };
        let corpus = Corpus::new(vec![doc]);
        let instances = build_pair_instances(&corpus, ScopeFilter::Intra);
        assert_eq!(instances.len(), 3);
        assert!(instances.iter().all(|i| i.label == PairLabel::None));
    }

    #[test]
    fn stats_on_fixture_and_empty() {
        let corpus = Corpus::new(vec![two_sentence_doc()]);
        let stats = corpus_stats(&corpus);
        assert_eq!(stats.n_docs, 1);
        assert_eq!(stats.n_topics, 1);
        assert_eq!(stats.n_mentions, 3);
        assert_eq!(stats.n_causal_pairs, 1);
        assert_eq!(stats.n_causal_intra, 0);
        assert_eq!(stats.n_causal_cross, 1);
        assert_eq!(stats.n_candidate_pairs, 3);
        assert_eq!(stats.n_causal_intra + stats.n_causal_cross, stats.n_causal_pairs);

        let empty = corpus_stats(&Corpus::new(vec![]));
        assert_eq!(empty.n_docs, 0);
        assert_eq!(empty.n_candidate_pairs, 0);
        assert_eq!(empty.n_mentions, 0);
    }

    #[test]
    fn jsonl_round_trip_preserves_documents() {
        let corpus = Corpus::new(vec![two_sentence_doc()]);
        let mut buf = Vec::new();
        corpus.write_jsonl(&mut buf).unwrap();
        let reparsed = Corpus::read_jsonl(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(corpus, reparsed);
    }

    fn topic_corpus(topics: &[&str]) -> Corpus {
        let docs = topics
            .iter()
            .enumerate()
            .map(|(i, t)| Document {
                doc_id: format!("{t}_{i}"),
                topic_id: Some(t.to_string()),
                sentences: vec![],
                mentions: vec![],
                causal_links: BTreeSet::new(),
            })
            .collect();
        Corpus::new(docs)
    }

    #[test]
    fn esc_folds_reserve_two_highest_topics_and_partition_rest() {
        let topics: Vec<String> =
            [1, 3, 4, 5, 7, 8, 12, 13, 14, 16, 18, 19, 20, 22, 23, 24, 30, 32, 33, 35, 37, 41]
                .iter()
                .map(|n| n.to_string())
                .collect();
        let refs: Vec<&str> = topics.iter().map(String::as_str).collect();
        let corpus = topic_corpus(&refs);
        let plan = make_folds(&corpus, FoldScheme::Esc5Fold, 13).unwrap();
        assert_eq!(plan.dev_unit_ids, vec!["37".to_string(), "41".to_string()]);
        assert_eq!(plan.folds.len(), 5);
        let mut covered = BTreeSet::new();
        for fold in &plan.folds {
            assert_eq!(fold.test_unit_ids.len(), 4);
            for t in &fold.test_unit_ids {
                assert!(covered.insert(t.clone()), "fold test sets overlap on {t}");
                assert!(!plan.dev_unit_ids.contains(t));
                assert!(!fold.train_unit_ids.contains(t));
            }
            assert_eq!(fold.train_unit_ids.len(), 16);
        }
        assert_eq!(covered.len(), 20);

        let same = make_folds(&corpus, FoldScheme::Esc5Fold, 13).unwrap();
        assert_eq!(plan, same);
        let different = make_folds(&corpus, FoldScheme::Esc5Fold, 14).unwrap();
        assert_ne!(plan.folds, different.folds);
    }

    #[test]
    fn esc_folds_require_topics() {
        let mut corpus = topic_corpus(&["1", "2", "3"]);
        corpus.documents[1].topic_id = None;
        assert!(matches!(
            make_folds(&corpus, FoldScheme::Esc5Fold, 0),
            Err(CorpusError::SchemeMismatch(_))
        ));
    }

    #[test]
    fn ctb_folds_balance_documents() {
        let docs: Vec<Document> = (0..184)
            .map(|i| Document {
                doc_id: format!("doc{i:03}"),
                topic_id: None,
                sentences: vec![],
                mentions: vec![],
                causal_links: BTreeSet::new(),
            })
            .collect();
        let corpus = Corpus::new(docs);
        let plan = make_folds(&corpus, FoldScheme::Ctb10Fold, 7).unwrap();
        assert!(plan.dev_unit_ids.is_empty());
        assert_eq!(plan.folds.len(), 10);
        let mut covered = BTreeSet::new();
        for fold in &plan.folds {
            assert!(fold.test_unit_ids.len() == 18 || fold.test_unit_ids.len() == 19);
            for d in &fold.test_unit_ids {
                assert!(covered.insert(d.clone()));
            }
        }
        assert_eq!(covered.len(), 184);

        let with_dev =
            make_folds_with_dev(&corpus, FoldScheme::Ctb10Fold, 7, Some(0.1)).unwrap();
        assert_eq!(with_dev.dev_unit_ids.len(), 18);
        for fold in &with_dev.folds {
            for d in &fold.test_unit_ids {
                assert!(!with_dev.dev_unit_ids.contains(d));
            }
        }
    }
}
