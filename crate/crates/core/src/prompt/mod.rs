//! Prompt construction: the prediction template for a query pair, the
//! analogy template for labeled demonstrations, seeded demonstration
//! sampling, and assembly into a single in-context input.
//!
//! Layout of an assembled prompt: sequence-start token, causal
//! demonstrations (each closed by a separator), then non-causal
//! demonstrations, then the query segment and a final separator. Each
//! segment ends with a cloze region `[start] E1 <slot> E2 [end]` where the
//! slot is the mask for the query and the label's virtual word for a
//! demonstration. Event markers highlight the query's mentions in its
//! sentence body only.

pub mod encode;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::hashing::fnv1a;
use crate::corpus::{
    Corpus, Document, EventMention, EventPairInstance, PairLabel, TokenSpan,
};

pub const TOK_CLS: &str = "[CLS]";
pub const TOK_SEP: &str = "[SEP]";
pub const TOK_MASK: &str = "[MASK]";
pub const TOK_START: &str = "[start]";
pub const TOK_END: &str = "[end]";
pub const TOK_E1_OPEN: &str = "[event1]";
pub const TOK_E1_CLOSE: &str = "[event1/]";
pub const TOK_E2_OPEN: &str = "[event2]";
pub const TOK_E2_CLOSE: &str = "[event2/]";
pub const WORD_CAUSAL: &str = "<causal>";
pub const WORD_NONE: &str = "<none>";

/// All reserved marker tokens, in registration order.
pub const MARKER_TOKENS: [&str; 9] = [
    TOK_CLS, TOK_SEP, TOK_MASK, TOK_START, TOK_END, TOK_E1_OPEN, TOK_E1_CLOSE, TOK_E2_OPEN,
    TOK_E2_CLOSE,
];

/// The two virtual answer words.
pub const VIRTUAL_WORDS: [&str; 2] = [WORD_CAUSAL, WORD_NONE];

pub fn virtual_word_for(label: PairLabel) -> &'static str {
    match label {
        PairLabel::Causal => WORD_CAUSAL,
        PairLabel::None => WORD_NONE,
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("unknown document '{0}'")]
    UnknownDocument(String),
    #[error("instance '{instance}' references unresolvable mention '{mention}'")]
    UnresolvableMention { instance: String, mention: String },
    #[error("demonstration pool has only {available} {label:?} instances, {requested} requested")]
    InsufficientPool { label: PairLabel, requested: usize, available: usize },
    #[error("prompt needs {required} tokens even with all demonstration bodies trimmed, max is {max}")]
    OverLength { required: usize, max: usize },
    #[error("tokenizer does not know reserved token '{0}'")]
    UnknownReservedToken(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    DemoCausal,
    DemoNone,
    Query,
}

/// One rendered template: body words followed by the cloze region.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub instance_id: String,
    pub label: PairLabel,
    pub words: Vec<String>,
    /// words[..body_len] is the sentence body; the rest is the cloze region.
    pub body_len: usize,
    /// Word-index span of E1's repetition inside the cloze region.
    pub cloze_e1: TokenSpan,
    pub cloze_e2: TokenSpan,
    /// Word index of the mask (query) or the answer word (demonstration).
    pub slot: usize,
}

impl Segment {
    pub fn text(&self) -> String {
        self.words.join(" ")
    }
}

fn resolve<'d>(
    doc: &'d Document,
    instance: &EventPairInstance,
    mention_id: &str,
) -> Result<&'d EventMention, PromptError> {
    let mention = doc.mention(mention_id).ok_or_else(|| PromptError::UnresolvableMention {
        instance: instance.instance_id.clone(),
        mention: mention_id.to_string(),
    })?;
    let sentence =
        doc.sentence(mention.sentence_index).ok_or_else(|| PromptError::UnresolvableMention {
            instance: instance.instance_id.clone(),
            mention: mention_id.to_string(),
        })?;
    if mention.span.is_empty() || mention.span.end > sentence.tokens.len() {
        return Err(PromptError::UnresolvableMention {
            instance: instance.instance_id.clone(),
            mention: mention_id.to_string(),
        });
    }
    Ok(mention)
}

/// Query template: sentences (the shared sentence once for intra-sentence
/// pairs), event occurrences wrapped in highlight markers, then the cloze
/// with a mask between the bare mentions.
pub fn render_prediction_prompt(
    query: &EventPairInstance,
    corpus: &Corpus,
) -> Result<Segment, PromptError> {
    render_segment(query, corpus, SegmentKind::Query, ClozeSlot::Mask, true)
}

/// Demonstration template: same shape, no highlight markers, and the slot
/// carries the label's virtual word.
pub fn render_analogy_prompt(
    demo: &EventPairInstance,
    corpus: &Corpus,
) -> Result<Segment, PromptError> {
    let kind = match demo.label {
        PairLabel::Causal => SegmentKind::DemoCausal,
        PairLabel::None => SegmentKind::DemoNone,
    };
    render_segment(demo, corpus, kind, ClozeSlot::Answer(demo.label), false)
}

enum ClozeSlot {
    Mask,
    Answer(PairLabel),
}

fn render_segment(
    instance: &EventPairInstance,
    corpus: &Corpus,
    kind: SegmentKind,
    slot: ClozeSlot,
    mark_events: bool,
) -> Result<Segment, PromptError> {
    let doc = corpus
        .document(&instance.doc_id)
        .ok_or_else(|| PromptError::UnknownDocument(instance.doc_id.clone()))?;
    let m1 = resolve(doc, instance, &instance.e1)?;
    let m2 = resolve(doc, instance, &instance.e2)?;

    let mut words: Vec<String> = Vec::new();
    if m1.sentence_index == m2.sentence_index {
        let sentence = doc.sentence(m1.sentence_index).expect("resolved above");
        let marks: &[(TokenSpan, &str, &str)] = &[
            (m1.span, TOK_E1_OPEN, TOK_E1_CLOSE),
            (m2.span, TOK_E2_OPEN, TOK_E2_CLOSE),
        ];
        emit_sentence(&sentence.tokens, if mark_events { marks } else { &[] }, &mut words);
    } else {
        let s1 = doc.sentence(m1.sentence_index).expect("resolved above");
        let s2 = doc.sentence(m2.sentence_index).expect("resolved above");
        let marks1: &[(TokenSpan, &str, &str)] = &[(m1.span, TOK_E1_OPEN, TOK_E1_CLOSE)];
        let marks2: &[(TokenSpan, &str, &str)] = &[(m2.span, TOK_E2_OPEN, TOK_E2_CLOSE)];
        emit_sentence(&s1.tokens, if mark_events { marks1 } else { &[] }, &mut words);
        emit_sentence(&s2.tokens, if mark_events { marks2 } else { &[] }, &mut words);
    }
    let body_len = words.len();

    words.push(TOK_START.to_string());
    let e1_start = words.len();
    words.extend(m1.surface.split(' ').map(String::from));
    let cloze_e1 = TokenSpan::new(e1_start, words.len());
    let slot_index = words.len();
    match slot {
        ClozeSlot::Mask => words.push(TOK_MASK.to_string()),
        ClozeSlot::Answer(label) => words.push(virtual_word_for(label).to_string()),
    }
    let e2_start = words.len();
    words.extend(m2.surface.split(' ').map(String::from));
    let cloze_e2 = TokenSpan::new(e2_start, words.len());
    words.push(TOK_END.to_string());

    Ok(Segment {
        kind,
        instance_id: instance.instance_id.clone(),
        label: instance.label,
        words,
        body_len,
        cloze_e1,
        cloze_e2,
        slot: slot_index,
    })
}

/// Copy sentence tokens, inserting open/close markers around each span.
fn emit_sentence(tokens: &[String], marks: &[(TokenSpan, &str, &str)], out: &mut Vec<String>) {
    for i in 0..=tokens.len() {
        // Close before open so adjacent spans do not interleave.
        for (span, _, close) in marks {
            if span.end == i {
                out.push(close.to_string());
            }
        }
        for (span, open, _) in marks {
            if span.start == i {
                out.push(open.to_string());
            }
        }
        if i < tokens.len() {
            out.push(tokens[i].clone());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplePhase {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    pub epoch: u64,
    pub query_id: String,
    pub phase: SamplePhase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemonstrationSet {
    pub causal: Vec<EventPairInstance>,
    pub none: Vec<EventPairInstance>,
    pub provenance: Provenance,
}

/// The demonstration pool: label-split instances from the active fold's
/// training split. Optionally excludes demonstrations drawn from the query's
/// own document (off by default; only the exact query instance is always
/// excluded).
#[derive(Debug, Clone)]
pub struct DemoPool {
    causal: Vec<EventPairInstance>,
    none: Vec<EventPairInstance>,
    exclude_same_doc: bool,
}

impl DemoPool {
    pub fn new(instances: &[EventPairInstance], exclude_same_doc: bool) -> Self {
        let mut causal = Vec::new();
        let mut none = Vec::new();
        for inst in instances {
            match inst.label {
                PairLabel::Causal => causal.push(inst.clone()),
                PairLabel::None => none.push(inst.clone()),
            }
        }
        Self { causal, none, exclude_same_doc }
    }

    pub fn causal_count(&self) -> usize {
        self.causal.len()
    }

    pub fn none_count(&self) -> usize {
        self.none.len()
    }
}

/// Uniform without-replacement selection per label group. Train-phase
/// selections vary with the epoch; eval-phase selections depend only on
/// (seed, query) so the same query sees identical demonstrations in every
/// epoch.
pub fn sample_demonstrations(
    pool: &DemoPool,
    m: usize,
    n: usize,
    seed: u64,
    epoch: u64,
    query: &EventPairInstance,
    phase: SamplePhase,
) -> Result<DemonstrationSet, PromptError> {
    let epoch_key = match phase {
        SamplePhase::Train => epoch,
        SamplePhase::Eval => 0,
    };
    let phase_tag: &[u8] = match phase {
        SamplePhase::Train => b"train",
        SamplePhase::Eval => b"eval",
    };
    let key = fnv1a(&[
        &seed.to_le_bytes(),
        phase_tag,
        &epoch_key.to_le_bytes(),
        query.instance_id.as_bytes(),
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(key);

    let admissible = |inst: &&EventPairInstance| {
        inst.instance_id != query.instance_id
            && !(pool.exclude_same_doc && inst.doc_id == query.doc_id)
    };
    let causal_pool: Vec<&EventPairInstance> = pool.causal.iter().filter(admissible).collect();
    let none_pool: Vec<&EventPairInstance> = pool.none.iter().filter(admissible).collect();

    if causal_pool.len() < m {
        return Err(PromptError::InsufficientPool {
            label: PairLabel::Causal,
            requested: m,
            available: causal_pool.len(),
        });
    }
    if none_pool.len() < n {
        return Err(PromptError::InsufficientPool {
            label: PairLabel::None,
            requested: n,
            available: none_pool.len(),
        });
    }

    let pick = |rng: &mut ChaCha8Rng, from: &[&EventPairInstance], count: usize| {
        rand::seq::index::sample(rng, from.len(), count)
            .into_iter()
            .map(|i| from[i].clone())
            .collect::<Vec<_>>()
    };
    let causal = pick(&mut rng, &causal_pool, m);
    let none = pick(&mut rng, &none_pool, n);

    Ok(DemonstrationSet {
        causal,
        none,
        provenance: Provenance { seed, epoch, query_id: query.instance_id.clone(), phase },
    })
}

/// The assembled in-context input, segments in final order.
#[derive(Debug, Clone, PartialEq)]
pub struct InContextPrompt {
    pub segments: Vec<Segment>,
}

impl InContextPrompt {
    /// Flattened word stream: sequence start, each segment followed by a
    /// separator.
    pub fn words(&self) -> Vec<String> {
        let mut out = vec![TOK_CLS.to_string()];
        for seg in &self.segments {
            out.extend(seg.words.iter().cloned());
            out.push(TOK_SEP.to_string());
        }
        out
    }

    pub fn rendered_text(&self) -> String {
        self.words().join(" ")
    }

    pub fn query(&self) -> &Segment {
        self.segments.last().expect("prompt always has a query segment")
    }

    pub fn demo_segments(&self) -> &[Segment] {
        &self.segments[..self.segments.len() - 1]
    }

    /// Human-readable dump: one titled block per segment.
    pub fn annotated_dump(&self) -> String {
        let mut out = String::new();
        let mut causal_idx = 0;
        let mut none_idx = 0;
        for seg in &self.segments {
            let title = match seg.kind {
                SegmentKind::DemoCausal => {
                    causal_idx += 1;
                    format!("causal demonstration {causal_idx} ({})", seg.instance_id)
                }
                SegmentKind::DemoNone => {
                    none_idx += 1;
                    format!("non-causal demonstration {none_idx} ({})", seg.instance_id)
                }
                SegmentKind::Query => format!("query ({})", seg.instance_id),
            };
            out.push_str(&format!("--- {title} ---\n{}\n", seg.text()));
        }
        out.push_str(&format!("--- full input ---\n{}\n", self.rendered_text()));
        out
    }
}

/// Causal demonstrations first, then non-causal, then the query.
pub fn assemble_in_context_prompt(
    query_segment: Segment,
    causal_demos: Vec<Segment>,
    none_demos: Vec<Segment>,
) -> InContextPrompt {
    debug_assert!(causal_demos.iter().all(|s| s.kind == SegmentKind::DemoCausal));
    debug_assert!(none_demos.iter().all(|s| s.kind == SegmentKind::DemoNone));
    debug_assert!(query_segment.kind == SegmentKind::Query);
    let mut segments = causal_demos;
    segments.extend(none_demos);
    segments.push(query_segment);
    InContextPrompt { segments }
}

/// Render everything for a query and its sampled demonstrations.
pub fn build_prompt(
    query: &EventPairInstance,
    demos: &DemonstrationSet,
    corpus: &Corpus,
) -> Result<InContextPrompt, PromptError> {
    let query_segment = render_prediction_prompt(query, corpus)?;
    let causal = demos
        .causal
        .iter()
        .map(|d| render_analogy_prompt(d, corpus))
        .collect::<Result<Vec<_>, _>>()?;
    let none = demos
        .none
        .iter()
        .map(|d| render_analogy_prompt(d, corpus))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble_in_context_prompt(query_segment, causal, none))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_pair_instances, Corpus, ScopeFilter};
    use std::collections::BTreeSet;

    fn fixture_corpus() -> Corpus {
        let xml = r#"<?xml version="1.0"?>
<Document doc_name="5_1fixture.xml">
  <token t_id="1" sentence="0" number="0">Rebels</token>
  <token t_id="2" sentence="0" number="1">attacked</token>
  <token t_id="3" sentence="0" number="2">the</token>
  <token t_id="4" sentence="0" number="3">village</token>
  <token t_id="5" sentence="0" number="4">and</token>
  <token t_id="6" sentence="0" number="5">many</token>
  <token t_id="7" sentence="0" number="6">died</token>
  <token t_id="8" sentence="1" number="0">Troops</token>
  <token t_id="9" sentence="1" number="1">were</token>
  <token t_id="10" sentence="1" number="2">sent</token>
  <token t_id="11" sentence="1" number="3">in</token>
  <token t_id="12" sentence="2" number="0">Aid</token>
  <token t_id="13" sentence="2" number="1">groups</token>
  <token t_id="14" sentence="2" number="2">pulled</token>
  <token t_id="15" sentence="2" number="3">out</token>
  <Markables>
    <ACTION_OCCURRENCE m_id="1"><token_anchor t_id="2"/></ACTION_OCCURRENCE>
    <ACTION_OCCURRENCE m_id="2"><token_anchor t_id="7"/></ACTION_OCCURRENCE>
    <ACTION_OCCURRENCE m_id="3"><token_anchor t_id="10"/></ACTION_OCCURRENCE>
    <ACTION_OCCURRENCE m_id="4"><token_anchor t_id="14"/><token_anchor t_id="15"/></ACTION_OCCURRENCE>
  </Markables>
  <Relations>
    <PLOT_LINK r_id="9" relType="PRECONDITION"><source m_id="1"/><target m_id="2"/></PLOT_LINK>
    <PLOT_LINK r_id="10" relType="PRECONDITION"><source m_id="1"/><target m_id="3"/></PLOT_LINK>
  </Relations>
</Document>"#;
        let doc = crate::corpus::esc::parse_esc_document(xml.as_bytes()).unwrap();
        Corpus::new(vec![doc])
    }

    fn instances(corpus: &Corpus) -> Vec<EventPairInstance> {
        build_pair_instances(corpus, ScopeFilter::Both)
    }

    fn find<'a>(
        insts: &'a [EventPairInstance],
        e1: &str,
        e2: &str,
    ) -> &'a EventPairInstance {
        insts.iter().find(|i| i.e1 == e1 && i.e2 == e2).unwrap()
    }

    #[test]
    fn intra_sentence_query_emits_sentence_once_with_markers() {
        let corpus = fixture_corpus();
        let insts = instances(&corpus);
        let q = find(&insts, "1", "2");
        let seg = render_prediction_prompt(q, &corpus).unwrap();
        assert_eq!(
            seg.text(),
            "Rebels [event1] attacked [event1/] the village and many [event2] died [event2/] \
             [start] attacked [MASK] died [end]"
        );
        assert_eq!(seg.words[seg.slot], TOK_MASK);
        assert_eq!(&seg.words[seg.cloze_e1.start..seg.cloze_e1.end], &["attacked"]);
        assert_eq!(&seg.words[seg.cloze_e2.start..seg.cloze_e2.end], &["died"]);
        // One sentence only: "Rebels" appears exactly once.
        assert_eq!(seg.words.iter().filter(|w| *w == "Rebels").count(), 1);
    }

    #[test]
    fn cross_sentence_query_emits_both_sentences() {
        let corpus = fixture_corpus();
        let insts = instances(&corpus);
        let q = find(&insts, "1", "3");
        let seg = render_prediction_prompt(q, &corpus).unwrap();
        assert_eq!(
            seg.text(),
            "Rebels [event1] attacked [event1/] the village and many died \
             Troops were [event2] sent [event2/] in \
             [start] attacked [MASK] sent [end]"
        );
    }

    #[test]
    fn multi_word_mention_repeats_verbatim_in_cloze() {
        let corpus = fixture_corpus();
        let insts = instances(&corpus);
        let q = find(&insts, "3", "4");
        let seg = render_prediction_prompt(q, &corpus).unwrap();
        assert_eq!(&seg.words[seg.cloze_e2.start..seg.cloze_e2.end], &["pulled", "out"]);
        assert_eq!(seg.words[seg.cloze_e2.end], TOK_END);
    }

    #[test]
    fn analogy_prompt_carries_virtual_word_and_no_markers() {
        let corpus = fixture_corpus();
        let insts = instances(&corpus);
        let causal = find(&insts, "1", "2");
        let seg = render_analogy_prompt(causal, &corpus).unwrap();
        assert_eq!(
            seg.text(),
            "Rebels attacked the village and many died [start] attacked <causal> died [end]"
        );
        let none = find(&insts, "2", "3");
        let seg = render_analogy_prompt(none, &corpus).unwrap();
        assert!(seg.text().contains("<none>"));
        assert!(!seg.text().contains(TOK_E1_OPEN));
    }

    #[test]
    fn unresolvable_mention_is_reported() {
        let corpus = fixture_corpus();
        let insts = instances(&corpus);
        let mut q = find(&insts, "1", "2").clone();
        q.e2 = "missing".into();
        assert!(matches!(
            render_prediction_prompt(&q, &corpus),
            Err(PromptError::UnresolvableMention { .. })
        ));
    }

    fn synth_pool(n_causal: usize, n_none: usize) -> (Vec<EventPairInstance>, EventPairInstance) {
        let mk = |i: usize, label: PairLabel| EventPairInstance {
            instance_id: format!("doc{}#a#b", i),
            doc_id: format!("doc{i}"),
            e1: "a".into(),
            e2: "b".into(),
            scope: crate::corpus::PairScope::Intra,
            label,
        };
        let mut pool = Vec::new();
        for i in 0..n_causal {
            pool.push(mk(i, PairLabel::Causal));
        }
        for i in 0..n_none {
            pool.push(mk(1000 + i, PairLabel::None));
        }
        let query = mk(0, PairLabel::Causal); // same id as pool[0]
        (pool, query)
    }

    #[test]
    fn eval_phase_sampling_ignores_epoch() {
        let (pool, query) = synth_pool(6, 6);
        let pool = DemoPool::new(&pool, false);
        let a = sample_demonstrations(&pool, 2, 2, 42, 1, &query, SamplePhase::Eval).unwrap();
        let b = sample_demonstrations(&pool, 2, 2, 42, 7, &query, SamplePhase::Eval).unwrap();
        assert_eq!(a.causal, b.causal);
        assert_eq!(a.none, b.none);
    }

    #[test]
    fn train_phase_sampling_varies_with_epoch_and_is_deterministic() {
        let (pool, query) = synth_pool(20, 20);
        let pool = DemoPool::new(&pool, false);
        let e1 = sample_demonstrations(&pool, 2, 2, 42, 1, &query, SamplePhase::Train).unwrap();
        let e1_again =
            sample_demonstrations(&pool, 2, 2, 42, 1, &query, SamplePhase::Train).unwrap();
        assert_eq!(e1.causal, e1_again.causal);
        let mut saw_difference = false;
        for epoch in 2..12 {
            let other =
                sample_demonstrations(&pool, 2, 2, 42, epoch, &query, SamplePhase::Train).unwrap();
            if other.causal != e1.causal || other.none != e1.none {
                saw_difference = true;
                break;
            }
        }
        assert!(saw_difference, "train-phase draws never varied across 10 epochs");
    }

    #[test]
    fn query_instance_is_never_its_own_demonstration() {
        let (pool, query) = synth_pool(3, 3);
        let pool = DemoPool::new(&pool, false);
        for epoch in 0..20 {
            let set =
                sample_demonstrations(&pool, 2, 2, 9, epoch, &query, SamplePhase::Train).unwrap();
            assert!(set.causal.iter().all(|d| d.instance_id != query.instance_id));
        }
    }

    #[test]
    fn insufficient_pool_names_the_label() {
        let (pool, query) = synth_pool(2, 5);
        let pool = DemoPool::new(&pool, false);
        // Only 1 causal remains after excluding the query itself.
        let err =
            sample_demonstrations(&pool, 2, 2, 0, 0, &query, SamplePhase::Train).unwrap_err();
        assert_eq!(
            err,
            PromptError::InsufficientPool {
                label: PairLabel::Causal,
                requested: 2,
                available: 1
            }
        );
    }

    #[test]
    fn zero_demonstrations_degenerates_to_plain_prompt() {
        let (pool, query) = synth_pool(3, 3);
        let pool = DemoPool::new(&pool, false);
        let set = sample_demonstrations(&pool, 0, 0, 0, 0, &query, SamplePhase::Eval).unwrap();
        assert!(set.causal.is_empty() && set.none.is_empty());
    }

    #[test]
    fn same_document_exclusion_flag() {
        let (mut pool_insts, query) = synth_pool(4, 4);
        // Put two extra causal instances in the query's own document.
        for k in 0..2 {
            pool_insts.push(EventPairInstance {
                instance_id: format!("doc0#x{k}#y{k}"),
                doc_id: "doc0".into(),
                e1: format!("x{k}"),
                e2: format!("y{k}"),
                scope: crate::corpus::PairScope::Intra,
                label: PairLabel::Causal,
            });
        }
        let strict = DemoPool::new(&pool_insts, true);
        for epoch in 0..10 {
            let set =
                sample_demonstrations(&strict, 3, 2, 5, epoch, &query, SamplePhase::Train).unwrap();
            assert!(set.causal.iter().all(|d| d.doc_id != query.doc_id));
        }
    }

    #[test]
    fn train_phase_selection_is_uniform() {
        // chi-square against uniform over C(10,2)=45 unordered pairs is
        // overkill; per-item inclusion frequency is binomial(M/N_pool).
        let (pool_insts, _) = synth_pool(10, 1);
        let outside_query = EventPairInstance {
            instance_id: "other#q#r".into(),
            doc_id: "other".into(),
            e1: "q".into(),
            e2: "r".into(),
            scope: crate::corpus::PairScope::Intra,
            label: PairLabel::None,
        };
        let pool = DemoPool::new(&pool_insts, false);
        let epochs = 1000u64;
        let mut counts = std::collections::BTreeMap::<String, u32>::new();
        for epoch in 0..epochs {
            let set =
                sample_demonstrations(&pool, 2, 0, 77, epoch, &outside_query, SamplePhase::Train)
                    .unwrap();
            for d in &set.causal {
                *counts.entry(d.instance_id.clone()).or_default() += 1;
            }
        }
        // Each of the 10 causal instances has inclusion probability 2/10.
        let p = 0.2f64;
        let expect = epochs as f64 * p;
        let sigma = (epochs as f64 * p * (1.0 - p)).sqrt();
        assert_eq!(counts.len(), 10, "every pool member should appear");
        for (id, count) in counts {
            let dev = (f64::from(count) - expect).abs();
            assert!(dev < 3.0 * sigma, "{id}: count {count} deviates {dev:.1} > 3 sigma");
        }
    }

    #[test]
    fn assembly_orders_segments_and_separators() {
        let corpus = fixture_corpus();
        let insts = instances(&corpus);
        let q = find(&insts, "2", "3").clone();
        let pool = DemoPool::new(
            &insts.iter().filter(|i| i.instance_id != q.instance_id).cloned().collect::<Vec<_>>(),
            false,
        );
        let demos = sample_demonstrations(&pool, 2, 2, 3, 0, &q, SamplePhase::Eval).unwrap();
        let prompt = build_prompt(&q, &demos, &corpus).unwrap();

        assert_eq!(prompt.segments.len(), 5);
        let kinds: Vec<SegmentKind> = prompt.segments.iter().map(|s| s.kind).collect();
        assert_eq!(
            kinds,
            vec![
                SegmentKind::DemoCausal,
                SegmentKind::DemoCausal,
                SegmentKind::DemoNone,
                SegmentKind::DemoNone,
                SegmentKind::Query
            ]
        );
        let words = prompt.words();
        assert_eq!(words[0], TOK_CLS);
        assert_eq!(words.iter().filter(|w| *w == &TOK_SEP.to_string()).count(), 5);
        assert_eq!(words.last().unwrap(), TOK_SEP);
        assert_eq!(words.iter().filter(|w| *w == &TOK_MASK.to_string()).count(), 1);

        // M=0, N=0 degenerates to [CLS] + query + [SEP].
        let empty = sample_demonstrations(&pool, 0, 0, 3, 0, &q, SamplePhase::Eval).unwrap();
        let plain = build_prompt(&q, &empty, &corpus).unwrap();
        assert_eq!(plain.segments.len(), 1);
        let words = plain.words();
        assert_eq!(words[0], TOK_CLS);
        assert_eq!(words.last().unwrap(), TOK_SEP);

        // M=1, N=2 keeps causal-before-none ordering.
        let lopsided = sample_demonstrations(&pool, 1, 2, 3, 0, &q, SamplePhase::Eval).unwrap();
        let p = build_prompt(&q, &lopsided, &corpus).unwrap();
        let kinds: Vec<SegmentKind> = p.segments.iter().map(|s| s.kind).collect();
        assert_eq!(
            kinds,
            vec![
                SegmentKind::DemoCausal,
                SegmentKind::DemoNone,
                SegmentKind::DemoNone,
                SegmentKind::Query
            ]
        );
    }

    #[test]
    fn demo_order_within_groups_preserves_sampling_order() {
        let corpus = fixture_corpus();
        let insts = instances(&corpus);
        let q = find(&insts, "2", "3").clone();
        let pool = DemoPool::new(&insts, false);
        let demos = sample_demonstrations(&pool, 2, 2, 11, 0, &q, SamplePhase::Eval).unwrap();
        let prompt = build_prompt(&q, &demos, &corpus).unwrap();
        let rendered_ids: Vec<&str> =
            prompt.segments[..2].iter().map(|s| s.instance_id.as_str()).collect();
        let sampled_ids: Vec<&str> =
            demos.causal.iter().map(|d| d.instance_id.as_str()).collect();
        assert_eq!(rendered_ids, sampled_ids);
    }

    #[test]
    fn eval_prompts_are_byte_identical_across_epochs() {
        let corpus = fixture_corpus();
        let insts = instances(&corpus);
        let q = find(&insts, "1", "4").clone();
        let pool = DemoPool::new(&insts, false);
        let mut renderings = BTreeSet::new();
        for epoch in [0u64, 3, 9, 100] {
            let demos =
                sample_demonstrations(&pool, 1, 2, 21, epoch, &q, SamplePhase::Eval).unwrap();
            let prompt = build_prompt(&q, &demos, &corpus).unwrap();
            renderings.insert(prompt.rendered_text());
        }
        assert_eq!(renderings.len(), 1);
    }
}
