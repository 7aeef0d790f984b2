//! Shared test fixtures: a synthetic corpus whose causality is signaled by
//! a connective token, so a small encoder can learn it from scratch.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eci_core::corpus::{
    Corpus, Document, EventMention, Fold, FoldPlan, FoldScheme, FoldUnit, LinkKey, PairLabel,
    Sentence, TokenSpan,
};

const NOUNS: [&str; 6] = ["storm", "crowd", "market", "engine", "river", "protest"];
const VERBS: [&str; 8] =
    ["surged", "failed", "erupted", "collapsed", "spread", "stopped", "grew", "burned"];

/// One single-sentence document per instance. Causal documents read
/// "the X V1 so the Y V2" and carry a link; non-causal ones use "while".
pub fn toy_corpus(n_causal: usize, n_none: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    for i in 0..n_causal + n_none {
        let causal = i < n_causal;
        let noun_a = NOUNS[rng.gen_range(0..NOUNS.len())];
        let noun_b = NOUNS[rng.gen_range(0..NOUNS.len())];
        let verb_a = VERBS[rng.gen_range(0..VERBS.len())];
        let mut verb_b = VERBS[rng.gen_range(0..VERBS.len())];
        while verb_b == verb_a {
            verb_b = VERBS[rng.gen_range(0..VERBS.len())];
        }
        let connective = if causal { "so" } else { "while" };
        let tokens: Vec<String> =
            ["the", noun_a, verb_a, connective, "the", noun_b, verb_b]
                .map(String::from)
                .to_vec();
        let mentions = vec![
            EventMention {
                mention_id: "e1".into(),
                sentence_index: 0,
                span: TokenSpan::new(2, 3),
                surface: verb_a.to_string(),
            },
            EventMention {
                mention_id: "e2".into(),
                sentence_index: 0,
                span: TokenSpan::new(6, 7),
                surface: verb_b.to_string(),
            },
        ];
        let causal_links: BTreeSet<LinkKey> = if causal {
            [LinkKey::new("e1", "e2")].into_iter().collect()
        } else {
            BTreeSet::new()
        };
        let doc = Document {
            doc_id: format!("toy{i:03}"),
            topic_id: None,
            sentences: vec![Sentence { index: 0, tokens }],
            mentions,
            causal_links,
        };
        doc.validate().expect("toy documents are valid");
        docs.push(doc);
    }
    Corpus::new(docs)
}

/// Single-fold plan with every document in both the train and test sets,
/// and no dev split; what overfit experiments want.
pub fn toy_fold_plan(corpus: &Corpus) -> FoldPlan {
    let ids: Vec<String> = corpus.documents.iter().map(|d| d.doc_id.clone()).collect();
    FoldPlan {
        scheme: FoldScheme::Ctb10Fold,
        unit: FoldUnit::Document,
        dev_unit_ids: vec![],
        folds: vec![Fold { train_unit_ids: ids.clone(), test_unit_ids: ids }],
    }
}

pub fn label_counts(corpus: &Corpus) -> (usize, usize) {
    let instances = eci_core::corpus::build_pair_instances(
        corpus,
        eci_core::corpus::ScopeFilter::Both,
    );
    let causal = instances.iter().filter(|i| i.label == PairLabel::Causal).count();
    (causal, instances.len() - causal)
}
