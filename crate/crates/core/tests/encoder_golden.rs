//! Frozen reference values for the seeded tiny encoder: a fixed seed and a
//! fixed input must keep producing these outputs (recorded from the first
//! verified run). Guards against silent changes to initialization order,
//! layer wiring, or the MLM head.

use eci_core::corpus::{PairLabel, TokenSpan};
use eci_core::encoder::tiny::{TinyConfig, TinyEncoder};
use eci_core::encoder::MaskedLmEncoder;
use eci_core::prompt::encode::{PromptEncoding, SegmentSpans, Vocabulary};
use eci_core::prompt::{SegmentKind, VIRTUAL_WORDS};

fn golden_encoder() -> TinyEncoder<f64> {
    let mut vocab = Vocabulary::with_markers();
    for w in ["storm", "flood", "caused", "the", "rains"] {
        vocab.add(w).unwrap();
    }
    TinyEncoder::new(
        42,
        TinyConfig { dim: 32, layers: 2, heads: 4, ffn_dim: 64, max_len: 64 },
        vocab,
    )
    .extend_vocabulary(&VIRTUAL_WORDS)
    .unwrap()
}

fn golden_encoding(enc: &TinyEncoder<f64>) -> PromptEncoding {
    let v = enc.vocabulary();
    let ids = vec![
        v.id("[CLS]").unwrap(),
        v.id("the").unwrap(),
        v.id("rains").unwrap(),
        v.id("caused").unwrap(),
        v.id("[start]").unwrap(),
        v.id("rains").unwrap(),
        v.id("[MASK]").unwrap(),
        v.id("flood").unwrap(),
        v.id("[end]").unwrap(),
        v.id("[SEP]").unwrap(),
    ];
    PromptEncoding {
        token_ids: ids,
        mask_index: 6,
        query: SegmentSpans {
            instance_id: "g".into(),
            kind: SegmentKind::Query,
            label: PairLabel::None,
            e1: TokenSpan::new(5, 6),
            e2: TokenSpan::new(7, 8),
            slot: 6,
        },
        demos: vec![],
        truncation: vec![],
    }
}

fn assert_close(got: f64, want: f64) {
    let tol = 1e-9 * want.abs().max(1.0);
    assert!((got - want).abs() < tol, "golden drift: got {got:.15e}, want {want:.15e}");
}

#[test]
fn hidden_states_match_recorded_goldens() {
    let enc = golden_encoder();
    let h = enc.encode(&golden_encoding(&enc)).unwrap();
    assert_eq!((h.0.rows(), h.0.cols()), (10, 32));
    let frob: f64 = h.0.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    assert_close(frob, 1.788854381998939e1);
    assert_close(h.0.at(0, 0), -7.048926166949615e-1);
    assert_close(h.0.at(3, 7), 1.097702681357603e0);
    assert_close(h.0.at(6, 0), 1.164265496093640e0);
    assert_close(h.0.at(6, 31), 7.931828773661089e-1);
    assert_close(h.0.at(9, 15), 7.864721416875439e-2);
}

#[test]
fn virtual_word_scores_match_recorded_goldens() {
    let enc = golden_encoder();
    let encoding = golden_encoding(&enc);
    let h = enc.encode(&encoding).unwrap();
    let scores = enc.mlm_scores(&h.0.row(encoding.mask_index).to_vec()).unwrap();
    let (id_causal, id_none) = enc.virtual_word_ids().unwrap();
    assert_close(scores[id_causal], 1.561952540699899e-1);
    assert_close(scores[id_none], -1.374978307239773e-1);
}
