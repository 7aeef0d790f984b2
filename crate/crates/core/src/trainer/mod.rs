//! Joint training loop: per-step optimization of the prediction loss plus
//! the (variant-dependent) contrastive term, fold-level runs with dev-based
//! checkpoint selection, and the experiment harnesses layered on top.

pub mod experiments;
pub mod optim;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    build_pair_instances, Corpus, CorpusError, EventPairInstance, FoldPlan, FoldScheme,
    PairLabel, ScopeFilter,
};
use crate::encoder::tiny::{TapedForward, TinyConfig, TinyEncoder};
use crate::encoder::{EncoderError, MaskedLmEncoder};
use crate::eval::{evaluate_split, EvalError, EvalParams};
use crate::hashing::fnv1a;
use crate::objective::{
    answer_probs, answer_score_grad, contrastive_loss_with_grad, in_batch_contrast_sets,
    total_loss, AnswerDistribution, ContrastFormulation, ContrastiveInput, InBatchContrast,
    LossBreakdown, ObjectiveError,
};
use crate::prompt::encode::{encode_prompt, PromptEncoding, Vocabulary, WordTokenizer};
use crate::prompt::{
    build_prompt, sample_demonstrations, DemoPool, PromptError, SamplePhase, VIRTUAL_WORDS,
};
use crate::scalar::Scalar;
use crate::tape::NodeId;
use crate::tensor::Tensor;
use optim::{AdamW, AdamWConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at step {step}; offending instances: {instance_ids:?}")]
    NonFiniteLoss { step: u64, instance_ids: Vec<String> },
    #[error("fold index {index} out of range ({count} folds)")]
    FoldOutOfRange { index: usize, count: usize },
    #[error("training split has {available} {label:?} instances, demo sampling needs {needed}")]
    InsufficientDemoPool { label: PairLabel, needed: usize, available: usize },
}

/// The six ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Prompt,
    InContext,
    ProconNoDemos,
    ProconWithDemos,
    Evtcon,
    Iccl,
}

/// What feeds the contrastive module for a variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContrastSource {
    EventOffsets,
    MaskState,
    None,
}

pub fn contrast_source(variant: Variant) -> ContrastSource {
    match variant {
        Variant::Iccl | Variant::Evtcon => ContrastSource::EventOffsets,
        Variant::ProconNoDemos | Variant::ProconWithDemos => ContrastSource::MaskState,
        Variant::Prompt | Variant::InContext => ContrastSource::None,
    }
}

impl Variant {
    pub fn uses_demonstrations(self) -> bool {
        matches!(self, Variant::InContext | Variant::ProconWithDemos | Variant::Iccl)
    }

    /// Within-batch contrast instead of in-prompt demonstrations.
    pub fn contrasts_within_batch(self) -> bool {
        matches!(self, Variant::ProconNoDemos | Variant::Evtcon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "defaults::variant")]
    pub variant: Variant,
    #[serde(default = "defaults::m")]
    pub m: usize,
    #[serde(default = "defaults::n")]
    pub n: usize,
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    #[serde(default = "defaults::tau")]
    pub tau: f64,
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    #[serde(default = "defaults::max_len")]
    pub max_len: usize,
    #[serde(default = "defaults::few_shot_fraction")]
    pub few_shot_fraction: f64,
    #[serde(default = "defaults::scheme")]
    pub scheme: FoldScheme,
    #[serde(default = "defaults::encoder")]
    pub encoder: String,
    #[serde(default)]
    pub formulation: ContrastFormulation,
    /// Pair scope used for training/evaluation; defaults by scheme
    /// (everything for the topic-fold corpus, intra-sentence for the
    /// document-fold corpus).
    #[serde(default)]
    pub scope: Option<ScopeFilter>,
    #[serde(default = "defaults::hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "defaults::encoder_layers")]
    pub encoder_layers: usize,
    #[serde(default = "defaults::encoder_heads")]
    pub encoder_heads: usize,
    #[serde(default = "defaults::encoder_ffn_dim")]
    pub encoder_ffn_dim: usize,
    #[serde(default = "defaults::patience")]
    pub patience: usize,
    #[serde(default)]
    pub exclude_same_doc_demos: bool,
    /// Keep at most this many non-causal training instances per causal one.
    #[serde(default)]
    pub negative_downsample_ratio: Option<f64>,
}

mod defaults {
    use super::{FoldScheme, Variant};

    pub fn variant() -> Variant {
        Variant::Iccl
    }
    pub fn m() -> usize {
        2
    }
    pub fn n() -> usize {
        2
    }
    pub fn beta() -> f64 {
        0.5
    }
    pub fn tau() -> f64 {
        1.0
    }
    pub fn lambda() -> f64 {
        0.01
    }
    pub fn learning_rate() -> f64 {
        1e-5
    }
    pub fn batch_size() -> usize {
        16
    }
    pub fn epochs() -> usize {
        20
    }
    pub fn seed() -> u64 {
        42
    }
    pub fn max_len() -> usize {
        512
    }
    pub fn few_shot_fraction() -> f64 {
        1.0
    }
    pub fn scheme() -> FoldScheme {
        FoldScheme::Esc5Fold
    }
    pub fn encoder() -> String {
        "tiny".to_string()
    }
    pub fn hidden_dim() -> usize {
        32
    }
    pub fn encoder_layers() -> usize {
        2
    }
    pub fn encoder_heads() -> usize {
        4
    }
    pub fn encoder_ffn_dim() -> usize {
        64
    }
    pub fn patience() -> usize {
        5
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let demo_count = self.m + self.n;
        if self.variant.uses_demonstrations() {
            if demo_count == 0 {
                return Err(TrainError::InvalidConfig(format!(
                    "variant {:?} requires M + N >= 1",
                    self.variant
                )));
            }
        } else if demo_count != 0 {
            return Err(TrainError::InvalidConfig(format!(
                "variant {:?} requires M = N = 0, got M={}, N={}",
                self.variant, self.m, self.n
            )));
        }
        if self.beta < 0.0 {
            return Err(TrainError::InvalidConfig("beta must be non-negative".into()));
        }
        if self.tau <= 0.0 {
            return Err(TrainError::InvalidConfig("tau must be positive".into()));
        }
        if !(self.few_shot_fraction > 0.0 && self.few_shot_fraction <= 1.0) {
            return Err(TrainError::InvalidConfig(
                "few_shot_fraction must lie in (0, 1]".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// β as used by the step: zero for the variants without contrast.
    pub fn effective_beta(&self) -> f64 {
        match contrast_source(self.variant) {
            ContrastSource::None => 0.0,
            _ => self.beta,
        }
    }

    pub fn effective_scope(&self) -> ScopeFilter {
        self.scope.unwrap_or(match self.scheme {
            FoldScheme::Esc5Fold => ScopeFilter::Both,
            FoldScheme::Ctb10Fold => ScopeFilter::Intra,
        })
    }

    pub fn tiny_config(&self) -> TinyConfig {
        TinyConfig {
            dim: self.hidden_dim,
            layers: self.encoder_layers,
            heads: self.encoder_heads,
            ffn_dim: self.encoder_ffn_dim,
            max_len: self.max_len,
        }
    }

    pub fn snapshot_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a(&[json.as_bytes()]))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let raw = std::fs::read_to_string(path)?;
        let config: TrainConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&raw)
                .map_err(|e| TrainError::InvalidConfig(format!("toml: {e}")))?,
            _ => serde_json::from_str(&raw)?,
        };
        config.validate()?;
        Ok(config)
    }
}

/// A query with its sampled demonstrations, rendered and tokenized.
#[derive(Debug, Clone)]
pub struct PreparedInstance {
    pub instance: EventPairInstance,
    pub encoding: PromptEncoding,
}

pub fn prepare_batch(
    queries: &[EventPairInstance],
    pool: &DemoPool,
    corpus: &Corpus,
    tokenizer: &WordTokenizer,
    config: &TrainConfig,
    epoch: u64,
    phase: SamplePhase,
) -> Result<Vec<PreparedInstance>, TrainError> {
    let mut out = Vec::with_capacity(queries.len());
    for query in queries {
        let demos = sample_demonstrations(
            pool,
            config.m,
            config.n,
            config.seed,
            epoch,
            query,
            phase,
        )?;
        let prompt = build_prompt(query, &demos, corpus)?;
        let encoding = encode_prompt(&prompt, tokenizer, config.max_len)?;
        out.push(PreparedInstance { instance: query.clone(), encoding });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct StepStats<S> {
    pub breakdown: LossBreakdown<S>,
    /// How many times the contrastive loss was evaluated this step.
    pub contrast_invocations: usize,
    /// Anchors skipped for lack of a same-label peer (within-batch variants)
    /// or of any positive demonstration.
    pub skipped_anchors: usize,
}

/// Per-instance forward bookkeeping for one step.
struct ForwardState<S: Scalar> {
    fwd: TapedForward<S>,
    scores_node: NodeId,
    dist: AnswerDistribution<S>,
    gold: PairLabel,
    instance_id: String,
    contrast: ContrastHandles,
}

enum ContrastHandles {
    None,
    /// Query offset nodes plus per-demonstration offset nodes with labels.
    EventOffsetDemos { query: (NodeId, NodeId), demos: Vec<(NodeId, NodeId, PairLabel)> },
    /// Query mask node plus per-demonstration answer-slot nodes with labels.
    MaskDemos { query: NodeId, demos: Vec<(NodeId, PairLabel)> },
    /// Within-batch: this instance contributes its query offset.
    EventOffsetBatch { query: (NodeId, NodeId) },
    /// Within-batch: this instance contributes its mask state.
    MaskBatch { query: NodeId },
}

fn offset_value<S: Scalar>(fwd: &TapedForward<S>, e1: NodeId, e2: NodeId) -> Vec<S> {
    fwd.value(e1)
        .data()
        .iter()
        .zip(fwd.value(e2).data())
        .map(|(a, b)| *a - *b)
        .collect()
}

/// One AdamW step on the joint objective over a prepared batch.
pub fn train_step<S: Scalar>(
    encoder: &mut TinyEncoder<S>,
    optimizer: &mut AdamW<S>,
    batch: &[PreparedInstance],
    config: &TrainConfig,
    step: u64,
) -> Result<StepStats<S>, TrainError> {
    let (stats, grads) = batch_gradients(encoder, batch, config, step)?;
    optimizer.step(encoder.param_tensors_mut(), &grads);
    Ok(stats)
}

/// Loss breakdown plus parameter gradients for one batch, without applying
/// an update. Gradients align with `param_tensors()` order.
pub fn batch_gradients<S: Scalar>(
    encoder: &TinyEncoder<S>,
    batch: &[PreparedInstance],
    config: &TrainConfig,
    step: u64,
) -> Result<(StepStats<S>, Vec<Option<Tensor<S>>>), TrainError> {
    assert!(!batch.is_empty(), "train_step needs a non-empty batch");
    let (id_causal, id_none) = encoder.virtual_word_ids()?;
    let source = contrast_source(config.variant);
    let batch_len = batch.len();

    // Forward pass per instance; record output nodes for the seeds.
    let mut states: Vec<ForwardState<S>> = Vec::with_capacity(batch_len);
    for prepared in batch {
        let mut fwd = encoder.forward_on_tape(&prepared.encoding)?;
        let mask_node = fwd.row_state(prepared.encoding.mask_index);
        let scores_node = fwd.scores_for(mask_node);
        let dist =
            answer_probs(fwd.value(scores_node).data(), id_causal, id_none)?;
        let contrast = match source {
            ContrastSource::None => ContrastHandles::None,
            ContrastSource::EventOffsets if config.variant.contrasts_within_batch() => {
                let e1 = fwd.span_state(prepared.encoding.query.e1);
                let e2 = fwd.span_state(prepared.encoding.query.e2);
                ContrastHandles::EventOffsetBatch { query: (e1, e2) }
            }
            ContrastSource::EventOffsets => {
                let e1 = fwd.span_state(prepared.encoding.query.e1);
                let e2 = fwd.span_state(prepared.encoding.query.e2);
                let demos = prepared
                    .encoding
                    .demos
                    .iter()
                    .map(|d| (fwd.span_state(d.e1), fwd.span_state(d.e2), d.label))
                    .collect();
                ContrastHandles::EventOffsetDemos { query: (e1, e2), demos }
            }
            ContrastSource::MaskState if config.variant.contrasts_within_batch() => {
                ContrastHandles::MaskBatch { query: mask_node }
            }
            ContrastSource::MaskState => {
                let demos = prepared
                    .encoding
                    .demos
                    .iter()
                    .map(|d| (fwd.row_state(d.slot), d.label))
                    .collect();
                ContrastHandles::MaskDemos { query: mask_node, demos }
            }
        };
        states.push(ForwardState {
            fwd,
            scores_node,
            dist,
            gold: prepared.instance.label,
            instance_id: prepared.instance.instance_id.clone(),
            contrast,
        });
    }

    // Prediction loss and its score-level gradients.
    let clamp = S::real(crate::objective::PROB_CLAMP_EPS);
    let inv_b = S::from_count(batch_len).recip();
    let mut l_pre = S::zero();
    let mut bad_instances: Vec<String> = Vec::new();
    for state in &states {
        let p = state.dist.prob_of(state.gold).max(clamp);
        let term = -(p.ln());
        if !term.is_finite() {
            bad_instances.push(state.instance_id.clone());
        }
        l_pre = l_pre + term;
    }
    l_pre = l_pre * inv_b;

    // Contrastive term. Per-instance gradient contributions are collected
    // first and scaled once the anchor count is known.
    let tau = S::real(config.tau);
    let beta = S::real(config.effective_beta());
    let mut l_con_sum = S::zero();
    let mut anchors = 0usize;
    let mut contrast_invocations = 0usize;
    let mut skipped_anchors = 0usize;
    // (state index, node, gradient, sign) contributions
    let mut contrast_seeds: Vec<(usize, NodeId, Vec<S>, S)> = Vec::new();

    if beta > S::zero() {
        if config.variant.contrasts_within_batch() {
            let vectors: Vec<Vec<S>> = states
                .iter()
                .map(|s| match &s.contrast {
                    ContrastHandles::EventOffsetBatch { query: (e1, e2) } => {
                        offset_value(&s.fwd, *e1, *e2)
                    }
                    ContrastHandles::MaskBatch { query } => s.fwd.value(*query).data().to_vec(),
                    _ => unreachable!("within-batch variants collect batch handles"),
                })
                .collect();
            let labels: Vec<PairLabel> = states.iter().map(|s| s.gold).collect();
            if batch_len >= 2 {
                for anchor_idx in 0..batch_len {
                    match in_batch_contrast_sets(
                        &vectors,
                        &labels,
                        anchor_idx,
                        tau,
                        config.formulation,
                    )? {
                        InBatchContrast::SkipAnchor => skipped_anchors += 1,
                        InBatchContrast::Sets { input, positive_indices, negative_indices } => {
                            let (loss, grads) = contrastive_loss_with_grad(&input, true)?;
                            contrast_invocations += 1;
                            let grads = grads.expect("requested gradients");
                            if !loss.is_finite() {
                                bad_instances.push(states[anchor_idx].instance_id.clone());
                            }
                            l_con_sum = l_con_sum + loss;
                            anchors += 1;
                            let mut contributions =
                                vec![(anchor_idx, grads.anchor)];
                            contributions.extend(
                                positive_indices.into_iter().zip(grads.positives),
                            );
                            contributions.extend(
                                negative_indices.into_iter().zip(grads.negatives),
                            );
                            for (target_idx, grad) in contributions {
                                match &states[target_idx].contrast {
                                    ContrastHandles::EventOffsetBatch { query: (e1, e2) } => {
                                        contrast_seeds
                                            .push((target_idx, *e1, grad.clone(), S::one()));
                                        contrast_seeds
                                            .push((target_idx, *e2, grad, -S::one()));
                                    }
                                    ContrastHandles::MaskBatch { query } => {
                                        contrast_seeds.push((target_idx, *query, grad, S::one()));
                                    }
                                    _ => unreachable!(),
                                }
                            }
                        }
                    }
                }
            }
        } else if config.variant.uses_demonstrations() {
            for (idx, state) in states.iter().enumerate() {
                let (anchor_vec, members): (Vec<S>, Vec<(Vec<S>, PairLabel, Vec<(NodeId, S)>)>) =
                    match &state.contrast {
                        ContrastHandles::EventOffsetDemos { query: (qe1, qe2), demos } => (
                            offset_value(&state.fwd, *qe1, *qe2),
                            demos
                                .iter()
                                .map(|(e1, e2, label)| {
                                    (
                                        offset_value(&state.fwd, *e1, *e2),
                                        *label,
                                        vec![(*e1, S::one()), (*e2, -S::one())],
                                    )
                                })
                                .collect(),
                        ),
                        ContrastHandles::MaskDemos { query, demos } => (
                            state.fwd.value(*query).data().to_vec(),
                            demos
                                .iter()
                                .map(|(node, label)| {
                                    (
                                        state.fwd.value(*node).data().to_vec(),
                                        *label,
                                        vec![(*node, S::one())],
                                    )
                                })
                                .collect(),
                        ),
                        ContrastHandles::None => continue,
                        _ => unreachable!("demo variants collect demo handles"),
                    };

                let mut positives = Vec::new();
                let mut positive_nodes = Vec::new();
                let mut negatives = Vec::new();
                let mut negative_nodes = Vec::new();
                for (vec, label, nodes) in members {
                    if label == state.gold {
                        positives.push(vec);
                        positive_nodes.push(nodes);
                    } else {
                        negatives.push(vec);
                        negative_nodes.push(nodes);
                    }
                }
                if positives.is_empty() {
                    skipped_anchors += 1;
                    continue;
                }
                let input = ContrastiveInput {
                    anchor: anchor_vec,
                    positives,
                    negatives,
                    temperature: tau,
                    formulation: config.formulation,
                };
                let (loss, grads) = contrastive_loss_with_grad(&input, true)?;
                contrast_invocations += 1;
                let grads = grads.expect("requested gradients");
                if !loss.is_finite() {
                    bad_instances.push(state.instance_id.clone());
                }
                l_con_sum = l_con_sum + loss;
                anchors += 1;

                match &state.contrast {
                    ContrastHandles::EventOffsetDemos { query: (qe1, qe2), .. } => {
                        contrast_seeds.push((idx, *qe1, grads.anchor.clone(), S::one()));
                        contrast_seeds.push((idx, *qe2, grads.anchor, -S::one()));
                    }
                    ContrastHandles::MaskDemos { query, .. } => {
                        contrast_seeds.push((idx, *query, grads.anchor, S::one()));
                    }
                    _ => unreachable!(),
                }
                for (nodes, grad) in positive_nodes.into_iter().zip(grads.positives) {
                    for (node, sign) in nodes {
                        contrast_seeds.push((idx, node, grad.clone(), sign));
                    }
                }
                for (nodes, grad) in negative_nodes.into_iter().zip(grads.negatives) {
                    for (node, sign) in nodes {
                        contrast_seeds.push((idx, node, grad.clone(), sign));
                    }
                }
            }
        }
    }

    let l_con = if anchors > 0 { l_con_sum / S::from_count(anchors) } else { S::zero() };
    let breakdown = total_loss(l_pre, l_con, beta);
    if !breakdown.l_total.is_finite() || !bad_instances.is_empty() {
        if bad_instances.is_empty() {
            bad_instances = states.iter().map(|s| s.instance_id.clone()).collect();
        }
        return Err(TrainError::NonFiniteLoss { step, instance_ids: bad_instances });
    }

    // Seed each instance's tape and accumulate parameter gradients.
    let contrast_scale = if anchors > 0 {
        beta / S::from_count(anchors)
    } else {
        S::zero()
    };
    let mut total_grads: Vec<Option<Tensor<S>>> = Vec::new();
    for (idx, state) in states.iter().enumerate() {
        let mut seeds: Vec<(NodeId, Tensor<S>)> = Vec::new();

        let vocab = encoder.vocabulary().len();
        let mut score_seed = Tensor::zeros(1, vocab);
        let (g_causal, g_none) = answer_score_grad(&state.dist, state.gold);
        score_seed.data_mut()[id_causal] = g_causal * inv_b;
        score_seed.data_mut()[id_none] = g_none * inv_b;
        seeds.push((state.scores_node, score_seed));

        for (owner, node, grad, sign) in &contrast_seeds {
            if *owner != idx {
                continue;
            }
            let scaled: Vec<S> =
                grad.iter().map(|g| *g * *sign * contrast_scale).collect();
            seeds.push((*node, Tensor::row_vector(scaled)));
        }

        let grads = state.fwd.backward(seeds);
        if total_grads.is_empty() {
            total_grads = grads;
        } else {
            for (acc, g) in total_grads.iter_mut().zip(grads) {
                match (acc.as_mut(), g) {
                    (Some(a), Some(b)) => a.add_inplace(&b),
                    (None, Some(b)) => *acc = Some(b),
                    _ => {}
                }
            }
        }
    }

    Ok((StepStats { breakdown, contrast_invocations, skipped_anchors }, total_grads))
}

/// Saved training outcome, reloadable to bitwise-identical evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<S> {
    pub run_id: String,
    pub fold_index: usize,
    pub epoch: usize,
    pub dev_metric: Option<f64>,
    pub config: TrainConfig,
    pub encoder: TinyEncoder<S>,
}

impl<S: Scalar + Serialize + for<'de> Deserialize<'de>> Checkpoint<S> {
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

#[derive(Debug, Clone, Serialize)]
struct StepLog<'a, S: Serialize> {
    step: u64,
    epoch: usize,
    l_pre: S,
    l_con: S,
    l_total: S,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<&'a str>,
}

#[derive(Debug, Clone, Serialize)]
struct EpochLog {
    epoch: usize,
    mean_l_total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    dev_f1: Option<f64>,
}

/// Everything a fold run produces beyond the checkpoint, for harnesses and
/// assertions.
#[derive(Debug)]
pub struct TrainRun<S> {
    pub checkpoint: Checkpoint<S>,
    pub step_breakdowns: Vec<LossBreakdown<S>>,
    pub epoch_mean_total: Vec<f64>,
    pub epoch_dev_f1: Vec<Option<f64>>,
    pub contrast_invocations: usize,
    pub skipped_anchors: usize,
}

/// Deterministic, label-stratified subsample preserving the class ratio
/// within one instance per class.
pub fn stratified_subsample(
    instances: &[EventPairInstance],
    fraction: f64,
    seed: u64,
) -> Vec<EventPairInstance> {
    if fraction >= 1.0 {
        return instances.to_vec();
    }
    let mut keep: BTreeSet<String> = BTreeSet::new();
    for label in [PairLabel::Causal, PairLabel::None] {
        let mut ids: Vec<&str> = instances
            .iter()
            .filter(|i| i.label == label)
            .map(|i| i.instance_id.as_str())
            .collect();
        ids.sort_unstable();
        let key = fnv1a(&[&seed.to_le_bytes(), b"few-shot", format!("{label:?}").as_bytes()]);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        ids.shuffle(&mut rng);
        let k = ((ids.len() as f64) * fraction).round() as usize;
        keep.extend(ids.into_iter().take(k).map(String::from));
    }
    instances.iter().filter(|i| keep.contains(&i.instance_id)).cloned().collect()
}

/// Keep every causal training instance and at most `ratio` non-causal ones
/// per causal instance.
fn downsample_negatives(
    instances: &[EventPairInstance],
    ratio: f64,
    seed: u64,
) -> Vec<EventPairInstance> {
    let n_causal = instances.iter().filter(|i| i.label == PairLabel::Causal).count();
    let budget = ((n_causal as f64) * ratio).round() as usize;
    let mut none_ids: Vec<&str> = instances
        .iter()
        .filter(|i| i.label == PairLabel::None)
        .map(|i| i.instance_id.as_str())
        .collect();
    if none_ids.len() <= budget {
        return instances.to_vec();
    }
    none_ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(&[&seed.to_le_bytes(), b"neg-downsample"]));
    none_ids.shuffle(&mut rng);
    let keep: BTreeSet<String> = none_ids.into_iter().take(budget).map(String::from).collect();
    instances
        .iter()
        .filter(|i| i.label == PairLabel::Causal || keep.contains(&i.instance_id))
        .cloned()
        .collect()
}

/// Instance sets for one fold: training (post-subsampling), dev, and test.
pub struct FoldData {
    pub train: Vec<EventPairInstance>,
    pub dev: Vec<EventPairInstance>,
    pub test: Vec<EventPairInstance>,
}

pub fn fold_data(
    corpus: &Corpus,
    plan: &FoldPlan,
    fold_index: usize,
    config: &TrainConfig,
) -> Result<FoldData, TrainError> {
    let fold = plan
        .folds
        .get(fold_index)
        .ok_or(TrainError::FoldOutOfRange { index: fold_index, count: plan.folds.len() })?;
    let scope = config.effective_scope();
    let all = build_pair_instances(corpus, scope);
    let doc_set = |unit_ids: &[String]| -> BTreeSet<String> {
        plan.docs_for_units(corpus, unit_ids).iter().map(|d| d.doc_id.clone()).collect()
    };
    let train_docs = doc_set(&fold.train_unit_ids);
    let test_docs = doc_set(&fold.test_unit_ids);
    let dev_docs = doc_set(&plan.dev_unit_ids);

    let mut train: Vec<EventPairInstance> =
        all.iter().filter(|i| train_docs.contains(&i.doc_id)).cloned().collect();
    if config.few_shot_fraction < 1.0 {
        train = stratified_subsample(&train, config.few_shot_fraction, config.seed);
    }
    if let Some(ratio) = config.negative_downsample_ratio {
        train = downsample_negatives(&train, ratio, config.seed);
    }
    let dev = all.iter().filter(|i| dev_docs.contains(&i.doc_id)).cloned().collect();
    let test = all.iter().filter(|i| test_docs.contains(&i.doc_id)).cloned().collect();
    Ok(FoldData { train, dev, test })
}

fn check_demo_pool(train: &[EventPairInstance], config: &TrainConfig) -> Result<(), TrainError> {
    let causal = train.iter().filter(|i| i.label == PairLabel::Causal).count();
    let none = train.len() - causal;
    let causal_queries = causal > 0;
    let none_queries = none > 0;
    let causal_needed = config.m + usize::from(causal_queries && config.m > 0);
    let none_needed = config.n + usize::from(none_queries && config.n > 0);
    if causal < causal_needed {
        return Err(TrainError::InsufficientDemoPool {
            label: PairLabel::Causal,
            needed: causal_needed,
            available: causal,
        });
    }
    if none < none_needed {
        return Err(TrainError::InsufficientDemoPool {
            label: PairLabel::None,
            needed: none_needed,
            available: none,
        });
    }
    Ok(())
}

/// Train on one fold's training split; the checkpoint is the best dev-F1
/// epoch when a dev split exists, the final epoch otherwise.
pub fn run_training<S: Scalar + Serialize + for<'de> Deserialize<'de>>(
    corpus: &Corpus,
    plan: &FoldPlan,
    fold_index: usize,
    config: &TrainConfig,
    log: &mut dyn Write,
) -> Result<TrainRun<S>, TrainError> {
    config.validate()?;
    let data = fold_data(corpus, plan, fold_index, config)?;
    check_demo_pool(&data.train, config)?;

    let vocab = Vocabulary::from_corpus(corpus);
    let mut encoder: TinyEncoder<S> = TinyEncoder::new(config.seed, config.tiny_config(), vocab)
        .extend_vocabulary(&VIRTUAL_WORDS)?;
    let tokenizer = WordTokenizer::new(encoder.vocabulary().clone());
    let pool = DemoPool::new(&data.train, config.exclude_same_doc_demos);

    let shapes: Vec<(usize, usize)> =
        encoder.param_tensors().iter().map(|t| (t.rows(), t.cols())).collect();
    let mut optimizer = AdamW::new(
        AdamWConfig {
            learning_rate: config.learning_rate,
            weight_decay: config.lambda,
            ..Default::default()
        },
        &shapes,
    );

    let run_id = format!(
        "{}-{}-seed{}",
        scheme_tag(config.scheme),
        variant_tag(config.variant),
        config.seed
    );
    let eval_params =
        EvalParams { m: config.m, n: config.n, seed: config.seed, max_len: config.max_len };
    let config_hash = config.snapshot_hash();

    let mut run = TrainRun {
        checkpoint: Checkpoint {
            run_id: run_id.clone(),
            fold_index,
            epoch: 0,
            dev_metric: None,
            config: config.clone(),
            encoder: encoder.clone(),
        },
        step_breakdowns: Vec::new(),
        epoch_mean_total: Vec::new(),
        epoch_dev_f1: Vec::new(),
        contrast_invocations: 0,
        skipped_anchors: 0,
    };

    let mut best_dev = f64::NEG_INFINITY;
    let mut epochs_since_best = 0usize;
    let mut global_step: u64 = 0;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(&[
            &config.seed.to_le_bytes(),
            b"epoch-order",
            &(epoch as u64).to_le_bytes(),
        ]));
        order.shuffle(&mut rng);

        let mut epoch_total = 0.0;
        let mut epoch_steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let queries: Vec<EventPairInstance> =
                chunk.iter().map(|&i| data.train[i].clone()).collect();
            let batch = prepare_batch(
                &queries,
                &pool,
                corpus,
                &tokenizer,
                config,
                epoch as u64,
                SamplePhase::Train,
            )?;
            global_step += 1;
            let stats = train_step(&mut encoder, &mut optimizer, &batch, config, global_step)?;
            run.contrast_invocations += stats.contrast_invocations;
            run.skipped_anchors += stats.skipped_anchors;
            epoch_total += stats.breakdown.l_total.as_f64();
            epoch_steps += 1;
            run.step_breakdowns.push(stats.breakdown);
            serde_json::to_writer(
                &mut *log,
                &StepLog {
                    step: global_step,
                    epoch,
                    l_pre: stats.breakdown.l_pre,
                    l_con: stats.breakdown.l_con,
                    l_total: stats.breakdown.l_total,
                    note: None,
                },
            )?;
            log.write_all(b"\n")?;
        }
        let mean_total = if epoch_steps > 0 { epoch_total / epoch_steps as f64 } else { 0.0 };
        run.epoch_mean_total.push(mean_total);

        let dev_f1 = if data.dev.is_empty() {
            None
        } else {
            let report = evaluate_split(
                &encoder,
                &tokenizer,
                corpus,
                &data.dev,
                &pool,
                &eval_params,
                Some(fold_index),
                &config_hash,
            )?;
            Some(report.both.map(|m| m.f1).unwrap_or(0.0))
        };
        run.epoch_dev_f1.push(dev_f1);
        serde_json::to_writer(&mut *log, &EpochLog { epoch, mean_l_total: mean_total, dev_f1 })?;
        log.write_all(b"\n")?;

        let improved = match dev_f1 {
            Some(f1) if f1 > best_dev => {
                best_dev = f1;
                true
            }
            Some(_) => false,
            // No dev split: the final epoch wins.
            None => true,
        };
        if improved {
            epochs_since_best = 0;
            run.checkpoint.epoch = epoch;
            run.checkpoint.dev_metric = dev_f1;
            run.checkpoint.encoder = encoder.clone();
        } else {
            epochs_since_best += 1;
            if dev_f1.is_some() && epochs_since_best >= config.patience {
                break;
            }
        }
    }

    Ok(run)
}

fn scheme_tag(scheme: FoldScheme) -> &'static str {
    match scheme {
        FoldScheme::Esc5Fold => "esc5",
        FoldScheme::Ctb10Fold => "ctb10",
    }
}

fn variant_tag(variant: Variant) -> &'static str {
    match variant {
        Variant::Prompt => "prompt",
        Variant::InContext => "in_context",
        Variant::ProconNoDemos => "procon_no_demos",
        Variant::ProconWithDemos => "procon_with_demos",
        Variant::Evtcon => "evtcon",
        Variant::Iccl => "iccl",
    }
}
