//! Masked-language-model abstraction: vocabulary extension with the virtual
//! answer words, full-sequence encoding, vocabulary scoring at the mask
//! state, and pooled event-state gathering.
//!
//! The pipeline is written against [`MaskedLmEncoder`]; [`tiny::TinyEncoder`]
//! is the seeded desk-scale implementation used by every test and by the
//! trainer. A pretrained backend satisfies the same contract.

pub mod tiny;

use thiserror::Error;

use crate::corpus::TokenSpan;
use crate::prompt::encode::{PromptEncoding, Vocabulary};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("input length {len} exceeds encoder maximum {max}")]
    OverLength { len: usize, max: usize },
    #[error("token id {id} out of vocabulary range {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("empty span: nothing to pool")]
    EmptySpan,
    #[error("span {start}..{end} out of range for {len} rows")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vocabulary already contains '{0}'")]
    DuplicateWord(String),
    #[error("virtual answer words are not in the vocabulary; extend it first")]
    MissingVirtualWords,
}

/// Final-layer hidden states, one row per input token.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates<S>(pub Tensor<S>);

impl<S: Scalar> HiddenStates<S> {
    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }
}

pub trait MaskedLmEncoder<S: Scalar> {
    /// Which weights back this handle (a pretrained family id, or
    /// "tiny-reference").
    fn identifier(&self) -> &str;
    fn hidden_dim(&self) -> usize;
    fn max_len(&self) -> usize;
    fn vocabulary(&self) -> &Vocabulary;

    /// Ids of `<causal>` and `<none>`; errors until the vocabulary has been
    /// extended with them.
    fn virtual_word_ids(&self) -> Result<(usize, usize), EncoderError> {
        let causal = self.vocabulary().id(crate::prompt::WORD_CAUSAL);
        let none = self.vocabulary().id(crate::prompt::WORD_NONE);
        match (causal, none) {
            (Some(c), Some(n)) if c != n => Ok((c, n)),
            _ => Err(EncoderError::MissingVirtualWords),
        }
    }

    /// Add reserved words: new rows in the input embedding and the MLM
    /// output layer, drawn from each table's empirical distribution;
    /// existing rows are untouched.
    fn extend_vocabulary(self, words: &[&str]) -> Result<Self, EncoderError>
    where
        Self: Sized;

    /// Full forward pass in inference mode.
    fn encode(&self, encoding: &PromptEncoding) -> Result<HiddenStates<S>, EncoderError>;

    /// Pre-normalization vocabulary scores for a single hidden state.
    fn mlm_scores(&self, h_mask: &[S]) -> Result<Vec<S>, EncoderError>;
}

/// Mean-pool the hidden states of a token span (multi-subword mentions).
pub fn gather_event_states<S: Scalar>(
    hidden: &HiddenStates<S>,
    span: TokenSpan,
) -> Result<Vec<S>, EncoderError> {
    if span.is_empty() {
        return Err(EncoderError::EmptySpan);
    }
    if span.end > hidden.len() {
        return Err(EncoderError::SpanOutOfRange {
            start: span.start,
            end: span.end,
            len: hidden.len(),
        });
    }
    let inv = S::from_count(span.len()).recip();
    let mut out = vec![S::zero(); hidden.dim()];
    for r in span.start..span.end {
        for (o, v) in out.iter_mut().zip(hidden.0.row(r)) {
            *o = *o + *v * inv;
        }
    }
    Ok(out)
}

/// The mask token's hidden state.
pub fn gather_mask_state<S: Scalar>(
    hidden: &HiddenStates<S>,
    mask_index: usize,
) -> Result<Vec<S>, EncoderError> {
    if mask_index >= hidden.len() {
        return Err(EncoderError::IndexOutOfRange { index: mask_index, len: hidden.len() });
    }
    Ok(hidden.0.row(mask_index).to_vec())
}
