//! Relation offsets, cosine similarity, the supervised contrastive loss over
//! demonstration relation vectors, answer-word probabilities, and the joint
//! training objective. Functions here are pure; the trainer wires them to
//! encoder states and seeds the tape with the gradients computed alongside.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::PairLabel;
use crate::scalar::Scalar;
use crate::tensor::{dot, norm};

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero-norm vector: cosine similarity undefined for degenerate relation offsets")]
    ZeroNormVector,
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("contrastive loss needs at least one positive sample")]
    NoPositives,
    #[error("within-batch contrast needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("answer ids must be distinct, both were {0}")]
    AnswerIdCollision(usize),
    #[error("answer id {id} out of range for score vector of length {len}")]
    AnswerIdOutOfRange { id: usize, len: usize },
}

/// Where a relation vector came from, tracked for embedding dumps and the
/// within-batch ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VectorSource {
    Query,
    DemoCausal,
    DemoNone,
    InBatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationVector<S> {
    pub z: Vec<S>,
    pub source: VectorSource,
}

/// z = h_e1 − h_e2, the offset between the pair's pooled hidden states.
pub fn relation_vector<S: Scalar>(
    h_e1: &[S],
    h_e2: &[S],
    source: VectorSource,
) -> Result<RelationVector<S>, ObjectiveError> {
    if h_e1.len() != h_e2.len() {
        return Err(ObjectiveError::DimensionMismatch { expected: h_e1.len(), got: h_e2.len() });
    }
    let z = h_e1.iter().zip(h_e2).map(|(a, b)| *a - *b).collect();
    Ok(RelationVector { z, source })
}

/// Cosine similarity. Zero-norm inputs are rejected rather than patched to
/// zero: a degenerate offset means both pooled event states coincided and the
/// instance should be surfaced upstream.
pub fn similarity<S: Scalar>(a: &[S], b: &[S]) -> Result<S, ObjectiveError> {
    if a.len() != b.len() {
        return Err(ObjectiveError::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let na = norm(a);
    let nb = norm(b);
    if na == S::zero() || nb == S::zero() {
        return Err(ObjectiveError::ZeroNormVector);
    }
    Ok(dot(a, b) / (na * nb))
}

/// Which algebraic form of the contrastive objective to use.
///
/// `LogOfSummedMass` is the log of the summed softmax mass over positives
/// (no 1/M factor). `MeanLogSoftmax` is the conventional mean over positives
/// of the per-positive log-softmax; the two agree exactly when there is a
/// single positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastFormulation {
    #[default]
    LogOfSummedMass,
    MeanLogSoftmax,
}

#[derive(Debug, Clone)]
pub struct ContrastiveInput<S> {
    pub anchor: Vec<S>,
    pub positives: Vec<Vec<S>>,
    pub negatives: Vec<Vec<S>>,
    pub temperature: S,
    pub formulation: ContrastFormulation,
}

/// Gradients of the contrastive loss with respect to its raw input vectors,
/// in the same order as the input collections.
#[derive(Debug, Clone)]
pub struct ContrastGradients<S> {
    pub anchor: Vec<S>,
    pub positives: Vec<Vec<S>>,
    pub negatives: Vec<Vec<S>>,
}

pub fn contrastive_loss<S: Scalar>(input: &ContrastiveInput<S>) -> Result<S, ObjectiveError> {
    contrastive_loss_with_grad(input, false).map(|(loss, _)| loss)
}

/// Loss plus, when `want_grad`, its gradients w.r.t. anchor and samples.
pub fn contrastive_loss_with_grad<S: Scalar>(
    input: &ContrastiveInput<S>,
    want_grad: bool,
) -> Result<(S, Option<ContrastGradients<S>>), ObjectiveError> {
    if input.temperature <= S::zero() {
        return Err(ObjectiveError::NonPositiveTemperature(input.temperature.as_f64()));
    }
    if input.positives.is_empty() {
        return Err(ObjectiveError::NoPositives);
    }
    let n_pos = input.positives.len();
    let members: Vec<&[S]> = input
        .positives
        .iter()
        .chain(input.negatives.iter())
        .map(|v| v.as_slice())
        .collect();

    let inv_tau = input.temperature.recip();
    let mut scores = Vec::with_capacity(members.len());
    for m in &members {
        scores.push(similarity(&input.anchor, m)? * inv_tau);
    }

    // Max-subtracted log-sum-exp keeps small temperatures stable and makes
    // the two formulations bitwise-equal for a single positive.
    let lse_all = log_sum_exp(&scores);
    let loss = match input.formulation {
        ContrastFormulation::LogOfSummedMass => lse_all - log_sum_exp(&scores[..n_pos]),
        ContrastFormulation::MeanLogSoftmax => {
            let mean_pos = scores[..n_pos].iter().copied().sum::<S>() / S::from_count(n_pos);
            lse_all - mean_pos
        }
    };

    if !want_grad {
        return Ok((loss, None));
    }

    // dL/ds_i, then chain through cosine similarity.
    let p_all = softmax(&scores);
    let mut dscore = p_all;
    match input.formulation {
        ContrastFormulation::LogOfSummedMass => {
            let a_pos = softmax(&scores[..n_pos]);
            for (d, a) in dscore[..n_pos].iter_mut().zip(&a_pos) {
                *d = *d - *a;
            }
        }
        ContrastFormulation::MeanLogSoftmax => {
            let inv_m = S::from_count(n_pos).recip();
            for d in &mut dscore[..n_pos] {
                *d = *d - inv_m;
            }
        }
    }

    let dim = input.anchor.len();
    let anchor_norm = norm(&input.anchor);
    let mut d_anchor = vec![S::zero(); dim];
    let mut d_members: Vec<Vec<S>> = Vec::with_capacity(members.len());
    for (i, m) in members.iter().enumerate() {
        let m_norm = norm(m);
        let cos = dot(&input.anchor, m) / (anchor_norm * m_norm);
        let coeff = dscore[i] * inv_tau;
        let mut d_m = vec![S::zero(); dim];
        for k in 0..dim {
            let dcos_danchor =
                m[k] / (anchor_norm * m_norm) - cos * input.anchor[k] / (anchor_norm * anchor_norm);
            let dcos_dm = input.anchor[k] / (anchor_norm * m_norm) - cos * m[k] / (m_norm * m_norm);
            d_anchor[k] = d_anchor[k] + coeff * dcos_danchor;
            d_m[k] = coeff * dcos_dm;
        }
        d_members.push(d_m);
    }
    let d_negatives = d_members.split_off(n_pos);
    Ok((
        loss,
        Some(ContrastGradients { anchor: d_anchor, positives: d_members, negatives: d_negatives }),
    ))
}

/// Within-batch positive/negative selection for the ablations that contrast
/// batch peers instead of in-prompt demonstrations.
#[derive(Debug, Clone)]
pub enum InBatchContrast<S> {
    /// The anchor has no same-label peer; omit its loss contribution.
    SkipAnchor,
    Sets {
        input: ContrastiveInput<S>,
        positive_indices: Vec<usize>,
        negative_indices: Vec<usize>,
    },
}

pub fn in_batch_contrast_sets<S: Scalar>(
    batch_vectors: &[Vec<S>],
    batch_labels: &[PairLabel],
    anchor_index: usize,
    temperature: S,
    formulation: ContrastFormulation,
) -> Result<InBatchContrast<S>, ObjectiveError> {
    if batch_vectors.len() < 2 {
        return Err(ObjectiveError::BatchTooSmall(batch_vectors.len()));
    }
    assert_eq!(batch_vectors.len(), batch_labels.len(), "labels must align with vectors");
    let anchor_label = batch_labels[anchor_index];
    let mut positive_indices = Vec::new();
    let mut negative_indices = Vec::new();
    for (i, label) in batch_labels.iter().enumerate() {
        if i == anchor_index {
            continue;
        }
        if *label == anchor_label {
            positive_indices.push(i);
        } else {
            negative_indices.push(i);
        }
    }
    if positive_indices.is_empty() {
        return Ok(InBatchContrast::SkipAnchor);
    }
    let input = ContrastiveInput {
        anchor: batch_vectors[anchor_index].clone(),
        positives: positive_indices.iter().map(|&i| batch_vectors[i].clone()).collect(),
        negatives: negative_indices.iter().map(|&i| batch_vectors[i].clone()).collect(),
        temperature,
        formulation,
    };
    Ok(InBatchContrast::Sets { input, positive_indices, negative_indices })
}

/// Two-way answer distribution over the virtual words.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnswerDistribution<S> {
    pub p_causal: S,
    pub p_none: S,
}

impl<S: Scalar> AnswerDistribution<S> {
    pub fn predicted(&self) -> PairLabel {
        if self.p_causal > self.p_none {
            PairLabel::Causal
        } else {
            PairLabel::None
        }
    }

    pub fn prob_of(&self, label: PairLabel) -> S {
        match label {
            PairLabel::Causal => self.p_causal,
            PairLabel::None => self.p_none,
        }
    }
}

/// Softmax restricted to the two answer-word scores; every other vocabulary
/// entry is ignored.
pub fn answer_probs<S: Scalar>(
    vocab_scores: &[S],
    id_causal: usize,
    id_none: usize,
) -> Result<AnswerDistribution<S>, ObjectiveError> {
    if id_causal == id_none {
        return Err(ObjectiveError::AnswerIdCollision(id_causal));
    }
    for id in [id_causal, id_none] {
        if id >= vocab_scores.len() {
            return Err(ObjectiveError::AnswerIdOutOfRange { id, len: vocab_scores.len() });
        }
    }
    let s_c = vocab_scores[id_causal];
    let s_n = vocab_scores[id_none];
    let m = s_c.max(s_n);
    let e_c = (s_c - m).exp();
    let e_n = (s_n - m).exp();
    let denom = e_c + e_n;
    Ok(AnswerDistribution { p_causal: e_c / denom, p_none: e_n / denom })
}

/// Gradient of the per-instance cross-entropy w.r.t. the two answer scores.
pub fn answer_score_grad<S: Scalar>(
    dist: &AnswerDistribution<S>,
    gold: PairLabel,
) -> (S, S) {
    let (y_c, y_n) = match gold {
        PairLabel::Causal => (S::one(), S::zero()),
        PairLabel::None => (S::zero(), S::one()),
    };
    (dist.p_causal - y_c, dist.p_none - y_n)
}

pub const PROB_CLAMP_EPS: f64 = 1e-12;

/// Mean cross-entropy over the batch plus an explicit L2 term. During
/// training the L2 term is handled by the optimizer's decoupled weight
/// decay and `parameter_norm_sq` is passed as zero; the explicit path keeps
/// the textbook form directly checkable.
pub fn prediction_loss<S: Scalar>(
    distributions: &[AnswerDistribution<S>],
    gold_labels: &[PairLabel],
    lambda: S,
    parameter_norm_sq: S,
) -> S {
    assert_eq!(distributions.len(), gold_labels.len(), "batch shape mismatch");
    assert!(!distributions.is_empty(), "prediction loss over an empty batch");
    let clamp = S::real(PROB_CLAMP_EPS);
    let mut total = S::zero();
    let mut clamped = 0usize;
    for (dist, gold) in distributions.iter().zip(gold_labels) {
        let mut p = dist.prob_of(*gold);
        if p < clamp {
            p = clamp;
            clamped += 1;
        }
        total = total - p.ln();
    }
    if clamped > 0 {
        log::warn!("prediction_loss clamped {clamped} zero probabilities to {PROB_CLAMP_EPS}");
    }
    total / S::from_count(distributions.len()) + lambda * parameter_norm_sq
}

/// The (L_pre, L_con, L_total) triple with the balancing weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<S> {
    pub l_pre: S,
    pub l_con: S,
    pub l_total: S,
    pub beta: S,
}

pub fn total_loss<S: Scalar>(l_pre: S, l_con: S, beta: S) -> LossBreakdown<S> {
    assert!(beta >= S::zero(), "beta must be non-negative");
    LossBreakdown { l_pre, l_con, l_total: l_pre + beta * l_con, beta }
}

fn log_sum_exp<S: Scalar>(scores: &[S]) -> S {
    let max = scores.iter().copied().fold(S::neg_infinity(), S::max);
    let sum: S = scores.iter().map(|s| (*s - max).exp()).sum();
    max + sum.ln()
}

fn softmax<S: Scalar>(scores: &[S]) -> Vec<S> {
    let mut out = vec![S::zero(); scores.len()];
    crate::tape::softmax_into(scores, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Literal transcription of the loss definition with naive exponentials,
    /// kept independent of the implementation above.
    fn brute_force_loss(input: &ContrastiveInput<f64>) -> f64 {
        let sim = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let tau = input.temperature;
        let num: f64 =
            input.positives.iter().map(|p| (sim(&input.anchor, p) / tau).exp()).sum();
        let den: f64 = input
            .positives
            .iter()
            .chain(input.negatives.iter())
            .map(|d| (sim(&input.anchor, d) / tau).exp())
            .sum();
        -(num / den).ln()
    }

    fn random_unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-3 {
                return v.iter().map(|x| x / n).collect();
            }
        }
    }

    fn random_input(rng: &mut ChaCha8Rng, m: usize, n: usize, tau: f64) -> ContrastiveInput<f64> {
        let dim = rng.gen_range(2..16);
        ContrastiveInput {
            anchor: random_unit_vector(dim, rng),
            positives: (0..m).map(|_| random_unit_vector(dim, rng)).collect(),
            negatives: (0..n).map(|_| random_unit_vector(dim, rng)).collect(),
            temperature: tau,
            formulation: ContrastFormulation::LogOfSummedMass,
        }
    }

    #[test]
    fn single_positive_no_negatives_is_exactly_zero() {
        let input = ContrastiveInput {
            anchor: vec![1.0, 0.0],
            positives: vec![vec![0.5, 0.5]],
            negatives: vec![],
            temperature: 1.0,
            formulation: ContrastFormulation::LogOfSummedMass,
        };
        assert_eq!(contrastive_loss(&input).unwrap(), 0.0);
    }

    #[test]
    fn equal_similarity_one_each_gives_ln_two() {
        // sim(+) = sim(−) by symmetry, so the ratio is 1/2 at any temperature.
        for tau in [0.1, 0.5, 1.0, 3.0] {
            let input = ContrastiveInput {
                anchor: vec![1.0, 0.0],
                positives: vec![vec![0.0, 1.0]],
                negatives: vec![vec![0.0, -1.0]],
                temperature: tau,
                formulation: ContrastFormulation::LogOfSummedMass,
            };
            let loss = contrastive_loss(&input).unwrap();
            assert!((loss - std::f64::consts::LN_2).abs() < 1e-12, "tau={tau}: {loss}");
        }
    }

    #[test]
    fn matches_brute_force_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let m = rng.gen_range(1..5);
            let n = rng.gen_range(0..5);
            let tau = rng.gen_range(0.05..4.0);
            let input = random_input(&mut rng, m, n, tau);
            let got = contrastive_loss(&input).unwrap();
            let want = brute_force_loss(&input);
            let scale = want.abs().max(1e-30);
            assert!((got - want).abs() / scale < 1e-10, "got {got}, want {want}");
        }
    }

    #[test]
    fn formulations_agree_exactly_for_single_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let mut input = random_input(&mut rng, 1, 3, 0.7);
            let a = contrastive_loss(&input).unwrap();
            input.formulation = ContrastFormulation::MeanLogSoftmax;
            let b = contrastive_loss(&input).unwrap();
            assert_eq!(a, b, "single-positive forms must agree bitwise");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for formulation in [ContrastFormulation::LogOfSummedMass, ContrastFormulation::MeanLogSoftmax] {
            for _ in 0..20 {
                let mut input = random_input(&mut rng, 2, 2, 0.8);
                input.formulation = formulation;
                let (_, grads) = contrastive_loss_with_grad(&input, true).unwrap();
                let grads = grads.unwrap();
                let eps = 1e-6;
                let dim = input.anchor.len();
                for k in 0..dim {
                    let mut plus = input.clone();
                    plus.anchor[k] += eps;
                    let mut minus = input.clone();
                    minus.anchor[k] -= eps;
                    let num = (contrastive_loss(&plus).unwrap()
                        - contrastive_loss(&minus).unwrap())
                        / (2.0 * eps);
                    assert!((grads.anchor[k] - num).abs() < 1e-6, "anchor[{k}]");
                }
                for (pi, gp) in grads.positives.iter().enumerate() {
                    for k in 0..dim {
                        let mut plus = input.clone();
                        plus.positives[pi][k] += eps;
                        let mut minus = input.clone();
                        minus.positives[pi][k] -= eps;
                        let num = (contrastive_loss(&plus).unwrap()
                            - contrastive_loss(&minus).unwrap())
                            / (2.0 * eps);
                        assert!((gp[k] - num).abs() < 1e-6, "positive[{pi}][{k}]");
                    }
                }
                for (ni, gn) in grads.negatives.iter().enumerate() {
                    for k in 0..dim {
                        let mut plus = input.clone();
                        plus.negatives[ni][k] += eps;
                        let mut minus = input.clone();
                        minus.negatives[ni][k] -= eps;
                        let num = (contrastive_loss(&plus).unwrap()
                            - contrastive_loss(&minus).unwrap())
                            / (2.0 * eps);
                        assert!((gn[k] - num).abs() < 1e-6, "negative[{ni}][{k}]");
                    }
                }
            }
        }
    }

    #[test]
    fn zero_positives_and_bad_temperature_error() {
        let input: ContrastiveInput<f64> = ContrastiveInput {
            anchor: vec![1.0],
            positives: vec![],
            negatives: vec![vec![1.0]],
            temperature: 1.0,
            formulation: ContrastFormulation::LogOfSummedMass,
        };
        assert_eq!(contrastive_loss(&input), Err(ObjectiveError::NoPositives));

        let input = ContrastiveInput {
            anchor: vec![1.0],
            positives: vec![vec![1.0]],
            negatives: vec![],
            temperature: 0.0,
            formulation: ContrastFormulation::LogOfSummedMass,
        };
        assert!(matches!(
            contrastive_loss(&input),
            Err(ObjectiveError::NonPositiveTemperature(_))
        ));
    }

    #[test]
    fn relation_vector_basics() {
        let rv = relation_vector(&[1.0, 2.0], &[0.5, 1.0], VectorSource::Query).unwrap();
        assert_eq!(rv.z, vec![0.5, 1.0]);

        let ab = relation_vector(&[3.0, -1.0], &[1.0, 4.0], VectorSource::Query).unwrap();
        let ba = relation_vector(&[1.0, 4.0], &[3.0, -1.0], VectorSource::Query).unwrap();
        let negated: Vec<f64> = ba.z.iter().map(|v| -v).collect();
        assert_eq!(ab.z, negated);

        let same = relation_vector(&[2.0, 2.0], &[2.0, 2.0], VectorSource::Query).unwrap();
        assert!(same.z.iter().all(|v| *v == 0.0));

        assert!(relation_vector(&[1.0], &[1.0, 2.0], VectorSource::Query).is_err());
    }

    #[test]
    fn similarity_basics() {
        assert!((similarity::<f64>(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(similarity::<f64>(&[1.0, 0.0], &[0.0, 5.0]).unwrap().abs() < 1e-12);
        assert!((similarity::<f64>(&[1.0, 2.0], &[3.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(similarity::<f64>(&[0.0, 0.0], &[1.0, 0.0]), Err(ObjectiveError::ZeroNormVector));
    }

    #[test]
    fn in_batch_selection() {
        let vecs: Vec<Vec<f64>> = vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![-1.0, 0.0]];
        let labels = [PairLabel::Causal, PairLabel::Causal, PairLabel::None];
        match in_batch_contrast_sets(&vecs, &labels, 0, 1.0, ContrastFormulation::LogOfSummedMass)
            .unwrap()
        {
            InBatchContrast::Sets { positive_indices, negative_indices, .. } => {
                assert_eq!(positive_indices, vec![1]);
                assert_eq!(negative_indices, vec![2]);
            }
            InBatchContrast::SkipAnchor => panic!("expected sets"),
        }

        // Anchor with a unique label yields the skip signal.
        let labels = [PairLabel::Causal, PairLabel::None, PairLabel::None];
        assert!(matches!(
            in_batch_contrast_sets(&vecs, &labels, 0, 1.0, ContrastFormulation::LogOfSummedMass)
                .unwrap(),
            InBatchContrast::SkipAnchor
        ));

        // All same label: negatives empty, loss is exactly zero.
        let labels = [PairLabel::None, PairLabel::None, PairLabel::None];
        match in_batch_contrast_sets(&vecs, &labels, 1, 1.0, ContrastFormulation::LogOfSummedMass)
            .unwrap()
        {
            InBatchContrast::Sets { input, .. } => {
                assert_eq!(contrastive_loss(&input).unwrap(), 0.0);
            }
            InBatchContrast::SkipAnchor => panic!("expected sets"),
        }

        assert_eq!(
            in_batch_contrast_sets(
                &vecs[..1],
                &labels[..1],
                0,
                1.0,
                ContrastFormulation::LogOfSummedMass
            )
            .unwrap_err(),
            ObjectiveError::BatchTooSmall(1)
        );
    }

    #[test]
    fn answer_probs_analytic_cases() {
        let mut scores = vec![0.0f64; 10];
        scores[3] = 2.0;
        scores[7] = 2.0;
        let d = answer_probs::<f64>(&scores, 3, 7).unwrap();
        assert!((d.p_causal - 0.5).abs() < 1e-12);
        assert!((d.p_none - 0.5).abs() < 1e-12);

        scores[3] = 3.0f64.ln();
        scores[7] = 0.0;
        let d = answer_probs(&scores, 3, 7).unwrap();
        assert!((d.p_causal - 0.75).abs() < 1e-12);
        assert!((d.p_none - 0.25).abs() < 1e-12);

        assert_eq!(answer_probs(&scores, 3, 3), Err(ObjectiveError::AnswerIdCollision(3)));
        assert!(matches!(
            answer_probs(&scores, 3, 99),
            Err(ObjectiveError::AnswerIdOutOfRange { id: 99, .. })
        ));
    }

    #[test]
    fn answer_probs_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let len = rng.gen_range(3..50);
            let scores: Vec<f64> = (0..len).map(|_| rng.gen_range(-30.0..30.0)).collect();
            let ic = rng.gen_range(0..len);
            let mut in_ = rng.gen_range(0..len);
            while in_ == ic {
                in_ = rng.gen_range(0..len);
            }
            let d = answer_probs(&scores, ic, in_).unwrap();
            let brute_c = scores[ic].exp() / (scores[ic].exp() + scores[in_].exp());
            assert!((d.p_causal - brute_c).abs() < 1e-12);
            assert!((d.p_causal + d.p_none - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn prediction_loss_analytic_cases() {
        let perfect = AnswerDistribution { p_causal: 1.0, p_none: 0.0 };
        assert_eq!(prediction_loss(&[perfect], &[PairLabel::Causal], 0.0, 0.0), 0.0);

        let half = AnswerDistribution { p_causal: 0.5, p_none: 0.5 };
        let loss = prediction_loss(&[half], &[PairLabel::Causal], 0.0, 0.0);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);

        // Batch of 3 with an explicit L2 term, against hand-computed value.
        let dists = [
            AnswerDistribution { p_causal: 0.9, p_none: 0.1 },
            AnswerDistribution { p_causal: 0.2, p_none: 0.8 },
            AnswerDistribution { p_causal: 0.6, p_none: 0.4 },
        ];
        let golds = [PairLabel::Causal, PairLabel::None, PairLabel::None];
        let norm_sq = 2.5;
        let lambda = 0.01;
        let want =
            -((0.9f64).ln() + (0.8f64).ln() + (0.4f64).ln()) / 3.0 + lambda * norm_sq;
        let got = prediction_loss(&dists, &golds, lambda, norm_sq);
        assert!((got - want).abs() / want.abs() < 1e-10);
    }

    #[test]
    fn prediction_loss_clamps_zero_probability() {
        let impossible = AnswerDistribution { p_causal: 0.0, p_none: 1.0 };
        let loss = prediction_loss(&[impossible], &[PairLabel::Causal], 0.0, 0.0);
        assert!((loss - (-PROB_CLAMP_EPS.ln())).abs() < 1e-6);
        assert!(loss.is_finite());
    }

    #[test]
    fn total_loss_cases() {
        let b = total_loss(1.0f64, 0.4, 0.5);
        assert!((b.l_total - 1.2).abs() < 1e-12);
        let b = total_loss(0.7f64, 123.0, 0.0);
        assert_eq!(b.l_total, b.l_pre);
    }

    proptest! {
        #[test]
        fn loss_is_nonnegative_and_scale_invariant(
            seed in 0u64..1000,
            m in 1usize..4,
            n in 0usize..4,
            tau in 0.1f64..3.0,
            k in 0.1f64..10.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let input = random_input(&mut rng, m, n, tau);
            let loss = contrastive_loss(&input).unwrap();
            prop_assert!(loss >= 0.0);
            if n == 0 {
                prop_assert!(loss.abs() < 1e-12);
            }
            let scaled = ContrastiveInput {
                anchor: input.anchor.iter().map(|v| v * k).collect(),
                positives: input.positives.iter().map(|p| p.iter().map(|v| v * k).collect()).collect(),
                negatives: input.negatives.iter().map(|p| p.iter().map(|v| v * k).collect()).collect(),
                ..input
            };
            let scaled_loss = contrastive_loss(&scaled).unwrap();
            prop_assert!((loss - scaled_loss).abs() < 1e-9 * loss.abs().max(1.0));
        }

        #[test]
        fn monotone_in_member_similarity(seed in 0u64..500) {
            // Nudging a negative toward the anchor raises the loss; nudging a
            // positive toward the anchor lowers it.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let input = random_input(&mut rng, 2, 2, 1.0);
            let base = contrastive_loss(&input).unwrap();

            let toward = |v: &[f64], anchor: &[f64]| -> Vec<f64> {
                v.iter().zip(anchor).map(|(x, a)| 0.5 * x + 0.5 * a).collect()
            };
            let mut closer_neg = input.clone();
            let before = similarity(&input.anchor, &input.negatives[0]).unwrap();
            closer_neg.negatives[0] = toward(&input.negatives[0], &input.anchor);
            let after = similarity(&input.anchor, &closer_neg.negatives[0]).unwrap();
            if after > before + 1e-9 {
                prop_assert!(contrastive_loss(&closer_neg).unwrap() > base);
            }

            let mut closer_pos = input.clone();
            let before = similarity(&input.anchor, &input.positives[0]).unwrap();
            closer_pos.positives[0] = toward(&input.positives[0], &input.anchor);
            let after = similarity(&input.anchor, &closer_pos.positives[0]).unwrap();
            if after > before + 1e-9 {
                prop_assert!(contrastive_loss(&closer_pos).unwrap() < base);
            }
        }

        #[test]
        fn answer_distribution_sums_to_one(s1 in -50.0f64..50.0, s2 in -50.0f64..50.0) {
            let d = answer_probs(&[s1, s2], 0, 1).unwrap();
            prop_assert!((d.p_causal + d.p_none - 1.0).abs() < 1e-9);
            prop_assert!(d.p_causal >= 0.0 && d.p_causal <= 1.0);
        }
    }
}
