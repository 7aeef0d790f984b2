//! Experiment harnesses over the single-fold trainer: few-shot fractions,
//! demonstration-count grids, and the contrastive-weight sweep. Every cell
//! is one full train-plus-eval on the given fold, with the test split held
//! fixed across cells.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, FoldPlan};
use crate::eval::{evaluate_split, EvalParams, EvalReport};
use crate::encoder::MaskedLmEncoder;
use crate::prompt::encode::WordTokenizer;
use crate::prompt::DemoPool;
use crate::scalar::Scalar;

use super::{fold_data, run_training, TrainConfig, TrainError};

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentRow {
    pub label: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SweepAxis {
    /// (M, N) grid.
    DemoCounts(Vec<(usize, usize)>),
    /// Contrastive-weight values.
    Beta(Vec<f64>),
}

/// Train with one config and evaluate on the fold's test split.
fn train_and_eval<S: Scalar + Serialize + for<'de> Deserialize<'de>>(
    corpus: &Corpus,
    plan: &FoldPlan,
    fold_index: usize,
    config: &TrainConfig,
    log: &mut dyn Write,
) -> Result<EvalReport, TrainError> {
    let run = run_training::<S>(corpus, plan, fold_index, config, log)?;
    let data = fold_data(corpus, plan, fold_index, config)?;
    let tokenizer = WordTokenizer::new(run.checkpoint.encoder.vocabulary().clone());
    let pool = DemoPool::new(&data.train, config.exclude_same_doc_demos);
    let params =
        EvalParams { m: config.m, n: config.n, seed: config.seed, max_len: config.max_len };
    Ok(evaluate_split(
        &run.checkpoint.encoder,
        &tokenizer,
        corpus,
        &data.test,
        &pool,
        &params,
        Some(fold_index),
        &config.snapshot_hash(),
    )?)
}

/// One row per training fraction, with stratified subsampling of the
/// training split and an identical test split across rows.
pub fn run_few_shot<S: Scalar + Serialize + for<'de> Deserialize<'de>>(
    corpus: &Corpus,
    plan: &FoldPlan,
    fold_index: usize,
    config: &TrainConfig,
    fractions: &[f64],
    log: &mut dyn Write,
) -> Result<Vec<ExperimentRow>, TrainError> {
    let mut rows = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(TrainError::InvalidConfig(format!(
                "few-shot fraction {fraction} outside (0, 1]"
            )));
        }
        let cell = TrainConfig { few_shot_fraction: fraction, ..config.clone() };
        let report = train_and_eval::<S>(corpus, plan, fold_index, &cell, log)?;
        rows.push(ExperimentRow { label: format!("fraction={fraction}"), report });
    }
    Ok(rows)
}

/// Grid over demonstration counts or the contrastive weight.
pub fn run_sweep<S: Scalar + Serialize + for<'de> Deserialize<'de>>(
    corpus: &Corpus,
    plan: &FoldPlan,
    fold_index: usize,
    config: &TrainConfig,
    axis: &SweepAxis,
    log: &mut dyn Write,
) -> Result<Vec<ExperimentRow>, TrainError> {
    let mut rows = Vec::new();
    match axis {
        SweepAxis::DemoCounts(cells) => {
            for &(m, n) in cells {
                let cell = TrainConfig { m, n, ..config.clone() };
                let report = train_and_eval::<S>(corpus, plan, fold_index, &cell, log)?;
                rows.push(ExperimentRow { label: format!("M={m},N={n}"), report });
            }
        }
        SweepAxis::Beta(betas) => {
            for &beta in betas {
                let cell = TrainConfig { beta, ..config.clone() };
                let report = train_and_eval::<S>(corpus, plan, fold_index, &cell, log)?;
                rows.push(ExperimentRow { label: format!("beta={beta}"), report });
            }
        }
    }
    Ok(rows)
}

/// Default demonstration-count grid: both lopsided ratios plus the
/// symmetric cells.
pub fn default_demo_grid() -> Vec<(usize, usize)> {
    vec![(1, 1), (2, 1), (1, 2), (2, 2), (3, 3)]
}

/// Default contrastive-weight grid.
pub fn default_beta_grid() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 1.0]
}
