//! Evaluation: answer-word prediction over a split with fixed eval-phase
//! demonstrations, precision/recall/F1 per scope, fold aggregation, report
//! emission, and relation-vector dumps for external projection tools.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, EventPairInstance, PairLabel, PairScope};
use crate::encoder::{gather_event_states, gather_mask_state, EncoderError, MaskedLmEncoder};
use crate::objective::{answer_probs, relation_vector, ObjectiveError, VectorSource};
use crate::prompt::encode::{encode_prompt, PromptTokenizer};
use crate::prompt::{build_prompt, sample_demonstrations, DemoPool, PromptError, SamplePhase};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("fold {0} is missing from the report set")]
    MissingFold(usize),
    #[error("fold {0} appears more than once")]
    DuplicateFold(usize),
    #[error("no reports to aggregate")]
    EmptyReportSet,
}

/// Confusion counts and derived metrics for one scope. Metrics whose
/// denominator was zero are reported as 0 with the matching flag set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScopedMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub undefined_precision: bool,
    pub undefined_recall: bool,
}

impl ScopedMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let undefined_precision = tp + fp == 0;
        let undefined_recall = tp + fn_ == 0;
        let precision = if undefined_precision { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if undefined_recall { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1, tp, fp, fn_, tn, undefined_precision, undefined_recall }
    }

    pub fn instance_count(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fold_id: Option<usize>,
    pub config_hash: String,
    pub intra: Option<ScopedMetrics>,
    pub cross: Option<ScopedMetrics>,
    pub both: Option<ScopedMetrics>,
}

impl EvalReport {
    pub fn scope(&self, scope: crate::corpus::ScopeFilter) -> Option<&ScopedMetrics> {
        match scope {
            crate::corpus::ScopeFilter::Intra => self.intra.as_ref(),
            crate::corpus::ScopeFilter::Cross => self.cross.as_ref(),
            crate::corpus::ScopeFilter::Both => self.both.as_ref(),
        }
    }
}

/// TN/FP/FN/TP bucket for the embedding dump, a pure function of
/// (gold, predicted) with `<causal>` as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictionCategory {
    TN,
    FP,
    FN,
    TP,
}

pub fn categorize(gold: PairLabel, predicted: PairLabel) -> PredictionCategory {
    match (gold, predicted) {
        (PairLabel::Causal, PairLabel::Causal) => PredictionCategory::TP,
        (PairLabel::Causal, PairLabel::None) => PredictionCategory::FN,
        (PairLabel::None, PairLabel::Causal) => PredictionCategory::FP,
        (PairLabel::None, PairLabel::None) => PredictionCategory::TN,
    }
}

/// Per-instance evaluation record: prediction plus the query relation
/// vector for embedding dumps.
#[derive(Debug, Clone)]
pub struct InstanceOutcome {
    pub instance_id: String,
    pub scope: PairScope,
    pub gold: PairLabel,
    pub predicted: PairLabel,
    pub p_causal: f64,
    pub relation_vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalParams {
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub max_len: usize,
}

/// Forward every instance with its fixed eval-phase demonstrations and
/// argmax the two-way answer distribution. Returns per-instance outcomes;
/// [`report_from_outcomes`] turns them into an [`EvalReport`].
pub fn evaluate_instances<S: Scalar, E: MaskedLmEncoder<S>>(
    encoder: &E,
    tokenizer: &dyn PromptTokenizer,
    corpus: &Corpus,
    instances: &[EventPairInstance],
    pool: &DemoPool,
    params: &EvalParams,
) -> Result<Vec<InstanceOutcome>, EvalError> {
    let (id_causal, id_none) = encoder.virtual_word_ids()?;
    let mut outcomes = Vec::with_capacity(instances.len());
    for instance in instances {
        let demos = sample_demonstrations(
            pool,
            params.m,
            params.n,
            params.seed,
            0,
            instance,
            SamplePhase::Eval,
        )?;
        let prompt = build_prompt(instance, &demos, corpus)?;
        let encoding = encode_prompt(&prompt, tokenizer, params.max_len)?;
        let hidden = encoder.encode(&encoding)?;
        let h_mask = gather_mask_state(&hidden, encoding.mask_index)?;
        let scores = encoder.mlm_scores(&h_mask)?;
        let dist = answer_probs(&scores, id_causal, id_none)?;
        let h_e1 = gather_event_states(&hidden, encoding.query.e1)?;
        let h_e2 = gather_event_states(&hidden, encoding.query.e2)?;
        let z = relation_vector(&h_e1, &h_e2, VectorSource::Query)?;
        outcomes.push(InstanceOutcome {
            instance_id: instance.instance_id.clone(),
            scope: instance.scope,
            gold: instance.label,
            predicted: dist.predicted(),
            p_causal: dist.p_causal.as_f64(),
            relation_vector: z.z.iter().map(|v| v.as_f64()).collect(),
        });
    }
    Ok(outcomes)
}

pub fn report_from_outcomes(
    outcomes: &[InstanceOutcome],
    fold_id: Option<usize>,
    config_hash: &str,
) -> EvalReport {
    let mut counts: BTreeMap<&str, [usize; 4]> = BTreeMap::new(); // [tp, fp, fn, tn]
    for outcome in outcomes {
        let scope_key = match outcome.scope {
            PairScope::Intra => "intra",
            PairScope::Cross => "cross",
        };
        for key in [scope_key, "both"] {
            let slot = counts.entry(key).or_default();
            match categorize(outcome.gold, outcome.predicted) {
                PredictionCategory::TP => slot[0] += 1,
                PredictionCategory::FP => slot[1] += 1,
                PredictionCategory::FN => slot[2] += 1,
                PredictionCategory::TN => slot[3] += 1,
            }
        }
    }
    let metrics = |key: &str| {
        counts.get(key).map(|[tp, fp, fn_, tn]| ScopedMetrics::from_counts(*tp, *fp, *fn_, *tn))
    };
    EvalReport {
        fold_id,
        config_hash: config_hash.to_string(),
        intra: metrics("intra"),
        cross: metrics("cross"),
        both: metrics("both"),
    }
}

/// End-to-end split evaluation.
pub fn evaluate_split<S: Scalar, E: MaskedLmEncoder<S>>(
    encoder: &E,
    tokenizer: &dyn PromptTokenizer,
    corpus: &Corpus,
    instances: &[EventPairInstance],
    pool: &DemoPool,
    params: &EvalParams,
    fold_id: Option<usize>,
    config_hash: &str,
) -> Result<EvalReport, EvalError> {
    let outcomes = evaluate_instances(encoder, tokenizer, corpus, instances, pool, params)?;
    Ok(report_from_outcomes(&outcomes, fold_id, config_hash))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeSummary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Cross-fold summary: unweighted means per scope by default, pooled
/// confusion counts behind the flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub n_folds: usize,
    pub pooled: bool,
    pub intra: Option<ScopeSummary>,
    pub cross: Option<ScopeSummary>,
    pub both: Option<ScopeSummary>,
}

pub fn aggregate_folds(
    reports: &[EvalReport],
    expected_folds: usize,
    pooled: bool,
) -> Result<FoldSummary, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::EmptyReportSet);
    }
    let mut seen = vec![false; expected_folds];
    for report in reports {
        let id = report.fold_id.ok_or(EvalError::MissingFold(0))?;
        if id >= expected_folds || seen[id] {
            return Err(EvalError::DuplicateFold(id));
        }
        seen[id] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(EvalError::MissingFold(missing));
    }

    let summarize = |pick: fn(&EvalReport) -> Option<&ScopedMetrics>| -> Option<ScopeSummary> {
        let per_fold: Vec<&ScopedMetrics> = reports.iter().filter_map(pick).collect();
        if per_fold.is_empty() {
            return None;
        }
        if pooled {
            let tp: usize = per_fold.iter().map(|m| m.tp).sum();
            let fp: usize = per_fold.iter().map(|m| m.fp).sum();
            let fn_: usize = per_fold.iter().map(|m| m.fn_).sum();
            let tn: usize = per_fold.iter().map(|m| m.tn).sum();
            let m = ScopedMetrics::from_counts(tp, fp, fn_, tn);
            Some(ScopeSummary { precision: m.precision, recall: m.recall, f1: m.f1 })
        } else {
            let k = per_fold.len() as f64;
            Some(ScopeSummary {
                precision: per_fold.iter().map(|m| m.precision).sum::<f64>() / k,
                recall: per_fold.iter().map(|m| m.recall).sum::<f64>() / k,
                f1: per_fold.iter().map(|m| m.f1).sum::<f64>() / k,
            })
        }
    };

    Ok(FoldSummary {
        n_folds: reports.len(),
        pooled,
        intra: summarize(|r| r.intra.as_ref()),
        cross: summarize(|r| r.cross.as_ref()),
        both: summarize(|r| r.both.as_ref()),
    })
}

/// CSV dump of query relation vectors with gold/predicted labels, one row
/// per evaluated instance. Header: instance_id, gold, pred, category,
/// z_0..z_{d-1}.
pub fn export_embeddings(outcomes: &[InstanceOutcome], out_path: &Path) -> Result<(), EvalError> {
    let mut writer = csv::Writer::from_path(out_path)?;
    let dim = outcomes.first().map(|o| o.relation_vector.len()).unwrap_or(0);
    let mut header = vec![
        "instance_id".to_string(),
        "gold".to_string(),
        "pred".to_string(),
        "category".to_string(),
    ];
    header.extend((0..dim).map(|i| format!("z_{i}")));
    writer.write_record(&header)?;
    for outcome in outcomes {
        let mut record = vec![
            outcome.instance_id.clone(),
            label_str(outcome.gold).to_string(),
            label_str(outcome.predicted).to_string(),
            format!("{:?}", categorize(outcome.gold, outcome.predicted)),
        ];
        record.extend(outcome.relation_vector.iter().map(|v| format!("{v}")));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reload a dump written by [`export_embeddings`].
pub fn load_embeddings(path: &Path) -> Result<Vec<(String, Vec<f64>)>, EvalError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let id = record.get(0).unwrap_or_default().to_string();
        let z = record
            .iter()
            .skip(4)
            .map(|v| v.parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        rows.push((id, z));
    }
    Ok(rows)
}

fn label_str(label: PairLabel) -> &'static str {
    match label {
        PairLabel::Causal => "causal",
        PairLabel::None => "none",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Table,
}

/// Emit a fold summary: stable-field-order JSON, or an aligned table with
/// one-decimal percentages.
pub fn render_summary(summary: &FoldSummary, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(summary).expect("summary serializes")
        }
        ReportFormat::Table => {
            let mut out = String::new();
            out.push_str(&format!(
                "{:<7} {:>7} {:>7} {:>7}\n",
                "scope", "P(%)", "R(%)", "F1(%)"
            ));
            let mut row = |name: &str, s: &Option<ScopeSummary>| {
                if let Some(s) = s {
                    out.push_str(&format!(
                        "{:<7} {:>7.1} {:>7.1} {:>7.1}\n",
                        name,
                        s.precision * 100.0,
                        s.recall * 100.0,
                        s.f1 * 100.0
                    ));
                }
            };
            row("intra", &summary.intra);
            row("cross", &summary.cross);
            row("both", &summary.both);
            out
        }
    }
}

pub fn write_report<W: Write>(
    summary: &FoldSummary,
    format: ReportFormat,
    mut w: W,
) -> Result<(), EvalError> {
    w.write_all(render_summary(summary, format).as_bytes())?;
    Ok(())
}
