//! Seeded, trainable, masked-LM-shaped reference encoder.
//!
//! Token + position embeddings, post-norm transformer layers (multi-head
//! self-attention, GELU feed-forward), and an untied MLM output layer. Small
//! enough that finite-difference gradient checks and overfit runs finish in
//! seconds, while exposing exactly the [`MaskedLmEncoder`] contract a
//! pretrained backend would.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EncoderError, HiddenStates, MaskedLmEncoder};
use crate::hashing::fnv1a;
use crate::prompt::encode::{PromptEncoding, Vocabulary};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const TINY_IDENTIFIER: &str = "tiny-reference";

const LN_EPS: f64 = 1e-12;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TinyConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
}

impl Default for TinyConfig {
    fn default() -> Self {
        Self { dim: 32, layers: 2, heads: 4, ffn_dim: 64, max_len: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TinyLayer<S> {
    wq: Tensor<S>,
    bq: Tensor<S>,
    wk: Tensor<S>,
    bk: Tensor<S>,
    wv: Tensor<S>,
    bv: Tensor<S>,
    wo: Tensor<S>,
    bo: Tensor<S>,
    ln1_gamma: Tensor<S>,
    ln1_beta: Tensor<S>,
    w1: Tensor<S>,
    b1: Tensor<S>,
    w2: Tensor<S>,
    b2: Tensor<S>,
    ln2_gamma: Tensor<S>,
    ln2_beta: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TinyParams<S> {
    token_embedding: Tensor<S>,
    position_embedding: Tensor<S>,
    emb_ln_gamma: Tensor<S>,
    emb_ln_beta: Tensor<S>,
    layers: Vec<TinyLayer<S>>,
    mlm_decoder: Tensor<S>,
    mlm_bias: Tensor<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyEncoder<S> {
    seed: u64,
    config: TinyConfig,
    #[serde(with = "vocab_serde")]
    vocab: Vocabulary,
    params: TinyParams<S>,
}

mod vocab_serde {
    use super::Vocabulary;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<Ser: Serializer>(v: &Vocabulary, s: Ser) -> Result<Ser::Ok, Ser::Error> {
        let words: Vec<&str> = (0..v.len()).map(|i| v.word(i).expect("dense ids")).collect();
        words.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vocabulary, D::Error> {
        let words = Vec::<String>::deserialize(d)?;
        let mut vocab = Vocabulary::default();
        for w in &words {
            vocab.add(w).map_err(serde::de::Error::custom)?;
        }
        Ok(vocab)
    }
}

impl<S: Scalar> TinyEncoder<S> {
    /// Randomly initialized masked-LM shape over the given vocabulary.
    pub fn new(seed: u64, config: TinyConfig, vocab: Vocabulary) -> Self {
        assert!(config.dim > 0 && config.dim % config.heads == 0, "dim must divide into heads");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = vocab.len();
        let d = config.dim;
        let randn = |rows, cols, rng: &mut ChaCha8Rng| Tensor::randn(rows, cols, 0.0, INIT_STD, rng);
        let ones = |cols| Tensor::from_vec(1, cols, vec![S::one(); cols]);
        let zeros = |cols| Tensor::zeros(1, cols);

        let token_embedding = randn(v, d, &mut rng);
        let position_embedding = randn(config.max_len, d, &mut rng);
        let layers = (0..config.layers)
            .map(|_| TinyLayer {
                wq: randn(d, d, &mut rng),
                bq: zeros(d),
                wk: randn(d, d, &mut rng),
                bk: zeros(d),
                wv: randn(d, d, &mut rng),
                bv: zeros(d),
                wo: randn(d, d, &mut rng),
                bo: zeros(d),
                ln1_gamma: ones(d),
                ln1_beta: zeros(d),
                w1: randn(d, config.ffn_dim, &mut rng),
                b1: zeros(config.ffn_dim),
                w2: randn(config.ffn_dim, d, &mut rng),
                b2: zeros(d),
                ln2_gamma: ones(d),
                ln2_beta: zeros(d),
            })
            .collect();
        let mlm_decoder = randn(v, d, &mut rng);
        let mlm_bias = zeros(v);

        Self {
            seed,
            config,
            vocab,
            params: TinyParams {
                token_embedding,
                position_embedding,
                emb_ln_gamma: ones(d),
                emb_ln_beta: zeros(d),
                layers,
                mlm_decoder,
                mlm_bias,
            },
        }
    }

    pub fn config(&self) -> &TinyConfig {
        &self.config
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec![
            "token_embedding".to_string(),
            "position_embedding".to_string(),
            "emb_ln_gamma".to_string(),
            "emb_ln_beta".to_string(),
        ];
        for i in 0..self.params.layers.len() {
            for field in [
                "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_gamma", "ln1_beta", "w1",
                "b1", "w2", "b2", "ln2_gamma", "ln2_beta",
            ] {
                names.push(format!("layer{i}.{field}"));
            }
        }
        names.push("mlm_decoder".to_string());
        names.push("mlm_bias".to_string());
        names
    }

    pub fn param_tensors(&self) -> Vec<&Tensor<S>> {
        let p = &self.params;
        let mut out = vec![
            &p.token_embedding,
            &p.position_embedding,
            &p.emb_ln_gamma,
            &p.emb_ln_beta,
        ];
        for l in &p.layers {
            out.extend([
                &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo, &l.ln1_gamma,
                &l.ln1_beta, &l.w1, &l.b1, &l.w2, &l.b2, &l.ln2_gamma, &l.ln2_beta,
            ]);
        }
        out.push(&p.mlm_decoder);
        out.push(&p.mlm_bias);
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let p = &mut self.params;
        let mut out: Vec<&mut Tensor<S>> = vec![
            &mut p.token_embedding,
            &mut p.position_embedding,
            &mut p.emb_ln_gamma,
            &mut p.emb_ln_beta,
        ];
        for l in &mut p.layers {
            out.extend([
                &mut l.wq,
                &mut l.bq,
                &mut l.wk,
                &mut l.bk,
                &mut l.wv,
                &mut l.bv,
                &mut l.wo,
                &mut l.bo,
                &mut l.ln1_gamma,
                &mut l.ln1_beta,
                &mut l.w1,
                &mut l.b1,
                &mut l.w2,
                &mut l.b2,
                &mut l.ln2_gamma,
                &mut l.ln2_beta,
            ]);
        }
        out.push(&mut p.mlm_decoder);
        out.push(&mut p.mlm_bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_tensors().iter().map(|t| t.data().len()).sum()
    }

    pub fn param_norm_sq(&self) -> S {
        self.param_tensors()
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|v| *v * *v)
            .sum()
    }

    fn check_input(&self, encoding: &PromptEncoding) -> Result<(), EncoderError> {
        if encoding.len() > self.config.max_len {
            return Err(EncoderError::OverLength {
                len: encoding.len(),
                max: self.config.max_len,
            });
        }
        let v = self.vocab.len();
        for &id in &encoding.token_ids {
            if id >= v {
                return Err(EncoderError::TokenOutOfRange { id, vocab: v });
            }
        }
        Ok(())
    }

    /// Record the whole forward pass on a tape. Parameter leaves are
    /// registered in `param_tensors` order, so backward gradients align with
    /// the optimizer's state slots.
    pub fn forward_on_tape(&self, encoding: &PromptEncoding) -> Result<TapedForward<S>, EncoderError> {
        self.check_input(encoding)?;
        let d = self.config.dim;
        let heads = self.config.heads;
        let dh = d / heads;
        let len = encoding.len();

        let mut tape = Tape::new();
        let param_nodes: Vec<NodeId> =
            self.param_tensors().into_iter().map(|t| tape.leaf(t.clone())).collect();
        let mut cursor = 0usize;
        let mut next = || {
            let id = param_nodes[cursor];
            cursor += 1;
            id
        };

        let tok_emb = next();
        let pos_emb = next();
        let emb_g = next();
        let emb_b = next();

        let tok_rows = tape.gather_rows(tok_emb, encoding.token_ids.clone());
        let pos_rows = tape.gather_rows(pos_emb, (0..len).collect());
        let summed = tape.add(tok_rows, pos_rows);
        let eps = S::real(LN_EPS);
        let mut x = tape.layer_norm(summed, emb_g, emb_b, eps);

        for _ in 0..self.config.layers {
            let (wq, bq, wk, bk, wv, bv, wo, bo) =
                (next(), next(), next(), next(), next(), next(), next(), next());
            let (ln1_g, ln1_b) = (next(), next());
            let (w1, b1, w2, b2) = (next(), next(), next(), next());
            let (ln2_g, ln2_b) = (next(), next());

            let q = tape.linear(x, wq, bq);
            let k = tape.linear(x, wk, bk);
            let v = tape.linear(x, wv, bv);
            let mut head_outputs = Vec::with_capacity(heads);
            let scale = S::real(1.0 / (dh as f64).sqrt());
            for h in 0..heads {
                let qh = tape.slice_cols(q, h * dh, dh);
                let kh = tape.slice_cols(k, h * dh, dh);
                let vh = tape.slice_cols(v, h * dh, dh);
                let scores = tape.matmul_nt(qh, kh);
                let scaled = tape.scale(scores, scale);
                let probs = tape.softmax_rows(scaled);
                head_outputs.push(tape.matmul(probs, vh));
            }
            let context = tape.concat_cols(head_outputs);
            let attn = tape.linear(context, wo, bo);
            let residual = tape.add(x, attn);
            x = tape.layer_norm(residual, ln1_g, ln1_b, eps);

            let f = tape.linear(x, w1, b1);
            let f = tape.gelu(f);
            let f = tape.linear(f, w2, b2);
            let residual = tape.add(x, f);
            x = tape.layer_norm(residual, ln2_g, ln2_b, eps);
        }

        let dec = next();
        let dec_bias = next();
        debug_assert_eq!(cursor, param_nodes.len());

        Ok(TapedForward { tape, hidden: x, dec, dec_bias, param_nodes })
    }
}

/// A recorded forward pass plus handles for gathering output nodes and
/// running backward.
pub struct TapedForward<S> {
    pub tape: Tape<S>,
    pub hidden: NodeId,
    dec: NodeId,
    dec_bias: NodeId,
    param_nodes: Vec<NodeId>,
}

impl<S: Scalar> TapedForward<S> {
    /// Mean-pooled hidden state of a token span, as a (1, d) node.
    pub fn span_state(&mut self, span: crate::corpus::TokenSpan) -> NodeId {
        let rows = self.tape.gather_rows(self.hidden, (span.start..span.end).collect());
        self.tape.mean_rows(rows)
    }

    /// One token's hidden state as a (1, d) node.
    pub fn row_state(&mut self, index: usize) -> NodeId {
        self.tape.gather_rows(self.hidden, vec![index])
    }

    /// MLM vocabulary scores for a (1, d) state node: h·Wᵀ + b as (1, V).
    pub fn scores_for(&mut self, state: NodeId) -> NodeId {
        let logits = self.tape.matmul_nt(state, self.dec);
        self.tape.add(logits, self.dec_bias)
    }

    pub fn value(&self, node: NodeId) -> &Tensor<S> {
        self.tape.value(node)
    }

    /// Backward from the given cotangents; returns per-parameter gradients
    /// aligned with `param_tensors()` order (None when untouched).
    pub fn backward(&self, seeds: Vec<(NodeId, Tensor<S>)>) -> Vec<Option<Tensor<S>>> {
        let grads = self.tape.backward(seeds);
        self.param_nodes.iter().map(|id| grads.get(*id).cloned()).collect()
    }
}

impl<S: Scalar> MaskedLmEncoder<S> for TinyEncoder<S> {
    fn identifier(&self) -> &str {
        TINY_IDENTIFIER
    }

    fn hidden_dim(&self) -> usize {
        self.config.dim
    }

    fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn extend_vocabulary(mut self, words: &[&str]) -> Result<Self, EncoderError> {
        for word in words {
            if self.vocab.id(word).is_some() {
                return Err(EncoderError::DuplicateWord(word.to_string()));
            }
        }
        for word in words {
            let key = fnv1a(&[&self.seed.to_le_bytes(), b"vocab-extend", word.as_bytes()]);
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            let emb_row = sample_like_table(&self.params.token_embedding, &mut rng);
            let dec_row = sample_like_table(&self.params.mlm_decoder, &mut rng);
            let bias_val = sample_like_table(&self.params.mlm_bias, &mut rng)[0];
            append_row(&mut self.params.token_embedding, &emb_row);
            append_row(&mut self.params.mlm_decoder, &dec_row);
            append_col(&mut self.params.mlm_bias, bias_val);
            self.vocab.add(word).expect("checked for duplicates above");
        }
        Ok(self)
    }

    fn encode(&self, encoding: &PromptEncoding) -> Result<HiddenStates<S>, EncoderError> {
        let fwd = self.forward_on_tape(encoding)?;
        Ok(HiddenStates(fwd.tape.value(fwd.hidden).clone()))
    }

    fn mlm_scores(&self, h_mask: &[S]) -> Result<Vec<S>, EncoderError> {
        if h_mask.len() != self.config.dim {
            return Err(EncoderError::DimensionMismatch {
                expected: self.config.dim,
                got: h_mask.len(),
            });
        }
        let h = Tensor::row_vector(h_mask.to_vec());
        let mut scores = h.matmul_nt(&self.params.mlm_decoder);
        scores.add_inplace(&self.params.mlm_bias);
        Ok(scores.data().to_vec())
    }
}

/// Draw one row from N(mean, std) of the table's existing entries.
fn sample_like_table<S: Scalar>(table: &Tensor<S>, rng: &mut ChaCha8Rng) -> Vec<S> {
    let n = table.data().len() as f64;
    let mean = table.data().iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let var = table.data().iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    Tensor::<S>::randn(1, table.cols(), mean, std, rng).data().to_vec()
}

fn append_row<S: Scalar>(table: &mut Tensor<S>, row: &[S]) {
    assert_eq!(row.len(), table.cols());
    let mut data = table.data().to_vec();
    data.extend_from_slice(row);
    *table = Tensor::from_vec(table.rows() + 1, table.cols(), data);
}

fn append_col<S: Scalar>(row_vector: &mut Tensor<S>, value: S) {
    assert_eq!(row_vector.rows(), 1);
    let mut data = row_vector.data().to_vec();
    data.push(value);
    *row_vector = Tensor::from_vec(1, row_vector.cols() + 1, data);
}
