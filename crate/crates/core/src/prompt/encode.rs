//! Tokenization of assembled prompts with marker/span bookkeeping.
//!
//! The [`PromptTokenizer`] trait is the seam between prompt construction and
//! a concrete vocabulary; [`WordTokenizer`] is the word-level implementation
//! used with the reference encoder (one id per word, reserved tokens never
//! split). A subword tokenizer satisfies the same contract by returning
//! several ids per word.

use std::collections::HashMap;

use crate::corpus::{Corpus, PairLabel, TokenSpan};
use crate::prompt::{
    InContextPrompt, PromptError, SegmentKind, MARKER_TOKENS, TOK_MASK, VIRTUAL_WORDS,
};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

pub const TOK_UNK: &str = "[UNK]";

impl Vocabulary {
    /// Unknown-word token plus every reserved marker, nothing else.
    pub fn with_markers() -> Self {
        let mut vocab = Self::default();
        vocab.add(TOK_UNK).expect("fresh vocabulary");
        for tok in MARKER_TOKENS {
            vocab.add(tok).expect("markers are distinct");
        }
        vocab
    }

    /// Markers plus the corpus's surface tokens (sorted, deduplicated).
    /// Virtual answer words are not included; vocabulary extension adds them.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut vocab = Self::with_markers();
        let mut words: Vec<&str> = corpus
            .documents
            .iter()
            .flat_map(|d| d.sentences.iter())
            .flat_map(|s| s.tokens.iter())
            .map(String::as_str)
            .collect();
        words.sort_unstable();
        words.dedup();
        for w in words {
            let _ = vocab.add(w); // duplicates with markers are fine to skip
        }
        vocab
    }

    pub fn add(&mut self, word: &str) -> Result<usize, PromptError> {
        if self.index.contains_key(word) {
            return Err(PromptError::UnknownReservedToken(format!(
                "duplicate vocabulary word '{word}'"
            )));
        }
        let id = self.words.len();
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn unk_id(&self) -> usize {
        self.index[TOK_UNK]
    }
}

pub trait PromptTokenizer {
    /// Ids for one word; reserved and virtual words map to exactly one id.
    fn encode_word(&self, word: &str) -> Vec<usize>;
    /// Inverse of encode, up to subword joining.
    fn decode(&self, ids: &[usize]) -> String;
    fn id_of(&self, token: &str) -> Option<usize>;
    fn vocab_size(&self) -> usize;
}

/// One id per whitespace-delimited word; unknown words map to `[UNK]`.
#[derive(Debug, Clone)]
pub struct WordTokenizer {
    vocab: Vocabulary,
}

impl WordTokenizer {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }
}

impl PromptTokenizer for WordTokenizer {
    fn encode_word(&self, word: &str) -> Vec<usize> {
        vec![self.vocab.id(word).unwrap_or_else(|| self.vocab.unk_id())]
    }

    fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|id| self.vocab.word(*id).unwrap_or(TOK_UNK))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn id_of(&self, token: &str) -> Option<usize> {
        self.vocab.id(token)
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }
}

/// Token-index bookkeeping for one segment of the encoded prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSpans {
    pub instance_id: String,
    pub kind: SegmentKind,
    pub label: PairLabel,
    /// Cloze-region event spans in final token indices.
    pub e1: TokenSpan,
    pub e2: TokenSpan,
    /// Token index of the mask (query) or answer word (demonstration).
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentTrim {
    pub segment_index: usize,
    pub tokens_removed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptEncoding {
    pub token_ids: Vec<usize>,
    pub mask_index: usize,
    pub query: SegmentSpans,
    pub demos: Vec<SegmentSpans>,
    /// Empty when the prompt fit without trimming.
    pub truncation: Vec<SegmentTrim>,
}

impl PromptEncoding {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Tokenize an assembled prompt. Over-length inputs lose demonstration body
/// tokens first (earliest demonstration, from the left); cloze regions and
/// the whole query segment are never trimmed, and an input that cannot fit
/// under those rules is an error.
pub fn encode_prompt(
    prompt: &InContextPrompt,
    tokenizer: &dyn PromptTokenizer,
    max_len: usize,
) -> Result<PromptEncoding, PromptError> {
    for tok in MARKER_TOKENS {
        if tokenizer.id_of(tok).is_none() {
            return Err(PromptError::UnknownReservedToken(tok.to_string()));
        }
    }
    for word in VIRTUAL_WORDS {
        if tokenizer.id_of(word).is_none() {
            return Err(PromptError::UnknownReservedToken(word.to_string()));
        }
    }

    // Per segment, per word: token ids.
    let per_segment: Vec<Vec<Vec<usize>>> = prompt
        .segments
        .iter()
        .map(|seg| seg.words.iter().map(|w| tokenizer.encode_word(w)).collect())
        .collect();

    let sep_overhead = 1 + prompt.segments.len(); // [CLS] plus one [SEP] per segment
    let mut total: usize = sep_overhead
        + per_segment.iter().flat_map(|seg| seg.iter()).map(Vec::len).sum::<usize>();

    // How many leading body words to drop per segment.
    let mut drop_words: Vec<usize> = vec![0; prompt.segments.len()];
    let mut truncation: Vec<SegmentTrim> = Vec::new();
    if total > max_len {
        let mut overflow = total - max_len;
        for (si, seg) in prompt.segments.iter().enumerate() {
            if seg.kind == SegmentKind::Query {
                continue;
            }
            let mut removed_tokens = 0;
            while overflow > 0 && drop_words[si] < seg.body_len {
                let w = drop_words[si];
                let n = per_segment[si][w].len();
                drop_words[si] += 1;
                removed_tokens += n;
                overflow = overflow.saturating_sub(n);
            }
            if removed_tokens > 0 {
                truncation.push(SegmentTrim { segment_index: si, tokens_removed: removed_tokens });
                total -= removed_tokens;
            }
            if overflow == 0 {
                break;
            }
        }
        if total > max_len {
            return Err(PromptError::OverLength { required: total, max: max_len });
        }
    }

    let cls_id = tokenizer.id_of(crate::prompt::TOK_CLS).expect("checked above");
    let sep_id = tokenizer.id_of(crate::prompt::TOK_SEP).expect("checked above");
    let mask_id = tokenizer.id_of(TOK_MASK).expect("checked above");

    let mut token_ids: Vec<usize> = vec![cls_id];
    let mut spans: Vec<SegmentSpans> = Vec::with_capacity(prompt.segments.len());
    for (si, seg) in prompt.segments.iter().enumerate() {
        // word index -> token range, for the words that survive trimming
        let mut word_ranges: HashMap<usize, TokenSpan> = HashMap::new();
        for (wi, ids) in per_segment[si].iter().enumerate() {
            if wi < drop_words[si] {
                continue;
            }
            let start = token_ids.len();
            token_ids.extend_from_slice(ids);
            word_ranges.insert(wi, TokenSpan::new(start, token_ids.len()));
        }
        token_ids.push(sep_id);

        let word_span_to_tokens = |span: TokenSpan| -> TokenSpan {
            let start = word_ranges[&span.start].start;
            let end = word_ranges[&(span.end - 1)].end;
            TokenSpan::new(start, end)
        };
        let slot_range = word_ranges[&seg.slot];
        debug_assert_eq!(slot_range.len(), 1, "slot words are single reserved tokens");
        spans.push(SegmentSpans {
            instance_id: seg.instance_id.clone(),
            kind: seg.kind,
            label: seg.label,
            e1: word_span_to_tokens(seg.cloze_e1),
            e2: word_span_to_tokens(seg.cloze_e2),
            slot: slot_range.start,
        });
    }

    let query = spans.pop().expect("prompt always has a query segment");
    debug_assert_eq!(query.kind, SegmentKind::Query);
    let mask_index = query.slot;
    assert_eq!(token_ids[mask_index], mask_id, "mask bookkeeping out of sync");

    Ok(PromptEncoding { token_ids, mask_index, query, demos: spans, truncation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_pair_instances, EventPairInstance, ScopeFilter};
    use crate::prompt::{
        build_prompt, sample_demonstrations, DemoPool, SamplePhase, WORD_CAUSAL, WORD_NONE,
    };

    fn fixture() -> (Corpus, Vec<EventPairInstance>, WordTokenizer) {
        let xml = r#"<?xml version="1.0"?>
<Document doc_name="7_1fixture.xml">
  <token t_id="1" sentence="0" number="0">Heavy</token>
  <token t_id="2" sentence="0" number="1">rain</token>
  <token t_id="3" sentence="0" number="2">caused</token>
  <token t_id="4" sentence="0" number="3">sudden</token>
  <token t_id="5" sentence="0" number="4">floods</token>
  <token t_id="6" sentence="1" number="0">Rivers</token>
  <token t_id="7" sentence="1" number="1">burst</token>
  <token t_id="8" sentence="1" number="2">their</token>
  <token t_id="9" sentence="1" number="3">banks</token>
  <token t_id="10" sentence="2" number="0">People</token>
  <token t_id="11" sentence="2" number="1">ran</token>
  <token t_id="12" sentence="2" number="2">away</token>
  <token t_id="13" sentence="2" number="3">fast</token>
  <Markables>
    <ACTION_OCCURRENCE m_id="1"><token_anchor t_id="3"/></ACTION_OCCURRENCE>
    <ACTION_OCCURRENCE m_id="2"><token_anchor t_id="5"/></ACTION_OCCURRENCE>
    <ACTION_OCCURRENCE m_id="3"><token_anchor t_id="7"/><token_anchor t_id="8"/><token_anchor t_id="9"/></ACTION_OCCURRENCE>
    <ACTION_OCCURRENCE m_id="4"><token_anchor t_id="11"/></ACTION_OCCURRENCE>
  </Markables>
  <Relations>
    <PLOT_LINK r_id="9" relType="PRECONDITION"><source m_id="1"/><target m_id="2"/></PLOT_LINK>
    <PLOT_LINK r_id="10" relType="PRECONDITION"><source m_id="1"/><target m_id="3"/></PLOT_LINK>
    <PLOT_LINK r_id="11" relType="FALLING_ACTION"><source m_id="3"/><target m_id="4"/></PLOT_LINK>
  </Relations>
</Document>"#;
        let doc = crate::corpus::esc::parse_esc_document(xml.as_bytes()).unwrap();
        let corpus = Corpus::new(vec![doc]);
        let instances = build_pair_instances(&corpus, ScopeFilter::Both);
        let mut vocab = Vocabulary::from_corpus(&corpus);
        vocab.add(WORD_CAUSAL).unwrap();
        vocab.add(WORD_NONE).unwrap();
        let tokenizer = WordTokenizer::new(vocab);
        (corpus, instances, tokenizer)
    }

    fn prompt_for(
        corpus: &Corpus,
        instances: &[EventPairInstance],
        m: usize,
        n: usize,
    ) -> InContextPrompt {
        let q = instances.iter().find(|i| i.e1 == "1" && i.e2 == "2").unwrap();
        let pool = DemoPool::new(instances, false);
        let demos = sample_demonstrations(&pool, m, n, 5, 0, q, SamplePhase::Eval).unwrap();
        build_prompt(q, &demos, corpus).unwrap()
    }

    #[test]
    fn within_limit_has_empty_truncation_and_valid_mask() {
        let (corpus, instances, tokenizer) = fixture();
        let prompt = prompt_for(&corpus, &instances, 0, 2);
        let enc = encode_prompt(&prompt, &tokenizer, 512).unwrap();
        assert!(enc.truncation.is_empty());
        assert_eq!(enc.token_ids[enc.mask_index], tokenizer.id_of(TOK_MASK).unwrap());
        assert_eq!(enc.demos.len(), 2);
        assert_eq!(enc.len(), prompt.words().len());
    }

    #[test]
    fn spans_decode_to_mention_surfaces() {
        let (corpus, instances, tokenizer) = fixture();
        // Query on the multi-word mention "burst their banks".
        let q = instances.iter().find(|i| i.e2 == "3").unwrap();
        let pool = DemoPool::new(&instances, false);
        let demos = sample_demonstrations(&pool, 1, 1, 5, 0, q, SamplePhase::Eval).unwrap();
        let prompt = build_prompt(q, &demos, &corpus).unwrap();
        let enc = encode_prompt(&prompt, &tokenizer, 512).unwrap();
        let doc = corpus.document(&q.doc_id).unwrap();
        let e2_ids = &enc.token_ids[enc.query.e2.start..enc.query.e2.end];
        assert_eq!(tokenizer.decode(e2_ids), doc.mention("3").unwrap().surface);
        let e1_ids = &enc.token_ids[enc.query.e1.start..enc.query.e1.end];
        assert_eq!(tokenizer.decode(e1_ids), doc.mention(&q.e1).unwrap().surface);
        for demo in &enc.demos {
            let ids = &enc.token_ids[demo.e1.start..demo.e1.end];
            assert!(!tokenizer.decode(ids).is_empty());
        }
    }

    #[test]
    fn over_length_trims_earliest_demo_body_first() {
        let (corpus, instances, tokenizer) = fixture();
        let prompt = prompt_for(&corpus, &instances, 2, 2);
        let full = encode_prompt(&prompt, &tokenizer, 512).unwrap();
        let budget = full.len() - 4;
        let enc = encode_prompt(&prompt, &tokenizer, budget).unwrap();
        assert_eq!(enc.len(), budget);
        assert_eq!(enc.truncation.len(), 1);
        assert_eq!(enc.truncation[0].segment_index, 0);
        assert_eq!(enc.truncation[0].tokens_removed, 4);
        // Mask bookkeeping survives the shift.
        assert_eq!(enc.token_ids[enc.mask_index], tokenizer.id_of(TOK_MASK).unwrap());
        // Demo cloze regions are intact: slots still hold virtual words.
        let causal_id = tokenizer.id_of(WORD_CAUSAL).unwrap();
        let none_id = tokenizer.id_of(WORD_NONE).unwrap();
        for demo in &enc.demos {
            let slot_id = enc.token_ids[demo.slot];
            assert!(slot_id == causal_id || slot_id == none_id);
        }
    }

    #[test]
    fn trims_cascade_across_demos_but_never_reach_the_query() {
        let (corpus, instances, tokenizer) = fixture();
        let prompt = prompt_for(&corpus, &instances, 2, 2);
        // Compute the irreducible size: everything except demo bodies.
        let body_tokens: usize = prompt.demo_segments().iter().map(|s| s.body_len).sum();
        let full_len = encode_prompt(&prompt, &tokenizer, 512).unwrap().len();
        let floor = full_len - body_tokens;

        let enc = encode_prompt(&prompt, &tokenizer, floor).unwrap();
        assert_eq!(enc.len(), floor);
        assert_eq!(enc.truncation.len(), prompt.demo_segments().len());
        assert_eq!(enc.token_ids[enc.mask_index], tokenizer.id_of(TOK_MASK).unwrap());

        // One token below the floor cannot fit: hard error, query untouched.
        let err = encode_prompt(&prompt, &tokenizer, floor - 1).unwrap_err();
        assert_eq!(err, PromptError::OverLength { required: floor, max: floor - 1 });
    }

    #[test]
    fn unknown_virtual_word_is_rejected() {
        let (corpus, instances, _) = fixture();
        let prompt = prompt_for(&corpus, &instances, 1, 1);
        let bare = WordTokenizer::new(Vocabulary::from_corpus(&corpus));
        let err = encode_prompt(&prompt, &bare, 512).unwrap_err();
        assert_eq!(err, PromptError::UnknownReservedToken(WORD_CAUSAL.to_string()));
    }

    #[test]
    fn exactly_one_mask_and_answer_word_counts() {
        let (corpus, instances, tokenizer) = fixture();
        let prompt = prompt_for(&corpus, &instances, 2, 1);
        let enc = encode_prompt(&prompt, &tokenizer, 512).unwrap();
        let mask_id = tokenizer.id_of(TOK_MASK).unwrap();
        let causal_id = tokenizer.id_of(WORD_CAUSAL).unwrap();
        let none_id = tokenizer.id_of(WORD_NONE).unwrap();
        assert_eq!(enc.token_ids.iter().filter(|&&t| t == mask_id).count(), 1);
        let virtuals =
            enc.token_ids.iter().filter(|&&t| t == causal_id || t == none_id).count();
        assert_eq!(virtuals, 3); // M + N
    }
}
