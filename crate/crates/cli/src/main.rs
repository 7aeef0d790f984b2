//! Command-line front end: corpus ingestion and statistics, prompt
//! inspection, training over cross-validation folds, evaluation, experiment
//! sweeps, and embedding dumps.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use eci_core::corpus::{
    self, build_pair_instances, corpus_stats, Corpus, FoldScheme, ScopeFilter,
};
use eci_core::encoder::MaskedLmEncoder;
use eci_core::eval::{
    aggregate_folds, evaluate_instances, export_embeddings, render_summary,
    report_from_outcomes, EvalParams, EvalReport, ReportFormat,
};
use eci_core::prompt::encode::WordTokenizer;
use eci_core::prompt::{build_prompt, sample_demonstrations, DemoPool, SamplePhase};
use eci_core::trainer::experiments::{
    default_beta_grid, default_demo_grid, run_few_shot, run_sweep, SweepAxis,
};
use eci_core::trainer::{fold_data, run_training, Checkpoint, TrainConfig, Variant};

#[derive(Parser)]
#[command(name = "eci", about = "Event causality identification pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus ingestion and statistics.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
    /// Prompt inspection.
    Prompt {
        #[command(subcommand)]
        command: PromptCommand,
    },
    /// Train on one fold or all folds of the configured scheme.
    Train(TrainArgs),
    /// Evaluate checkpoints on their fold's test split.
    Eval(EvalArgs),
    /// Few-shot harness: one training run per fraction of the training split.
    FewShot(FewShotArgs),
    /// Grid sweep over demonstration counts or the contrastive weight.
    Sweep(SweepArgs),
    /// Dump query relation vectors with labels and prediction categories.
    ExportEmbeddings(ExportArgs),
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Parse a corpus directory into the normalized JSON-lines format.
    Parse {
        #[arg(long, value_enum)]
        format: CorpusFormat,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
    /// Report corpus statistics from a normalized file.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        /// Emit JSON instead of the aligned table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CorpusFormat {
    Esc,
    Ctb,
}

#[derive(Subcommand)]
enum PromptCommand {
    /// Render the in-context input for one query instance.
    Dump {
        #[arg(long)]
        corpus: PathBuf,
        /// Instance id, e.g. "doc.xml#12#15".
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        epoch: u64,
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, value_enum, default_value_t = PhaseArg::Eval)]
        phase: PhaseArg,
        /// Exclude demonstrations from the query's own document.
        #[arg(long)]
        exclude_same_doc: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    Train,
    Eval,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Train a single fold; all folds of the scheme otherwise.
    #[arg(long)]
    fold: Option<usize>,
    /// Override the config's variant.
    #[arg(long)]
    variant: Option<VariantArg>,
    /// Override the config's few-shot fraction.
    #[arg(long)]
    fraction: Option<f64>,
    /// Reserve this fraction of documents as a dev split (document-fold
    /// scheme only; the topic-fold scheme has a fixed dev split).
    #[arg(long)]
    dev_fraction: Option<f64>,
    /// Output directory for checkpoints and logs.
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Prompt,
    InContext,
    ProconNoDemos,
    ProconWithDemos,
    Evtcon,
    Iccl,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Prompt => Variant::Prompt,
            VariantArg::InContext => Variant::InContext,
            VariantArg::ProconNoDemos => Variant::ProconNoDemos,
            VariantArg::ProconWithDemos => Variant::ProconWithDemos,
            VariantArg::Evtcon => Variant::Evtcon,
            VariantArg::Iccl => Variant::Iccl,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// One or more fold checkpoints; several are aggregated.
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    /// Override the checkpoint's fold scheme.
    #[arg(long)]
    scheme: Option<SchemeArg>,
    #[arg(long, value_enum, default_value_t = ScopeArg::Both)]
    scope: ScopeArg,
    /// Aggregate folds by pooled confusion counts instead of metric means.
    #[arg(long)]
    pooled: bool,
    #[arg(long)]
    json: bool,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    #[arg(long)]
    dev_fraction: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Esc5fold,
    Ctb10fold,
}

impl From<SchemeArg> for FoldScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Esc5fold => FoldScheme::Esc5Fold,
            SchemeArg::Ctb10fold => FoldScheme::Ctb10Fold,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Intra,
    Cross,
    Both,
}

impl From<ScopeArg> for ScopeFilter {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Intra => ScopeFilter::Intra,
            ScopeArg::Cross => ScopeFilter::Cross,
            ScopeArg::Both => ScopeFilter::Both,
        }
    }
}

#[derive(Args)]
struct FewShotArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Comma-separated fractions of the training split.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.2, 0.4, 0.6, 0.8, 1.0])]
    fractions: Vec<f64>,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[arg(long, value_enum)]
    axis: AxisArg,
    /// Axis values: "0,0.25,0.5" for beta, "2x2,2x1,1x2" for demo counts.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    DemoCounts,
    Beta,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = ScopeArg::Both)]
    scope: ScopeArg,
    #[arg(long)]
    dev_fraction: Option<f64>,
}

fn main() -> Result<()> {
    env_logger::init();
    match Cli::parse().command {
        Command::Corpus { command } => run_corpus(command),
        Command::Prompt { command } => run_prompt(command),
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::FewShot(args) => run_few_shot_cmd(args),
        Command::Sweep(args) => run_sweep_cmd(args),
        Command::ExportEmbeddings(args) => run_export(args),
    }
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    Corpus::load_jsonl(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn run_corpus(command: CorpusCommand) -> Result<()> {
    match command {
        CorpusCommand::Parse { format, input, output } => {
            let corpus = match format {
                CorpusFormat::Esc => corpus::esc::parse_esc_dir(&input),
                CorpusFormat::Ctb => corpus::timeml::parse_ctb_dir(&input),
            }
            .with_context(|| format!("parsing {}", input.display()))?;
            corpus.save_jsonl(&output)?;
            let stats = corpus_stats(&corpus);
            eprintln!(
                "wrote {} documents ({} mentions, {} causal pairs) to {}",
                stats.n_docs,
                stats.n_mentions,
                stats.n_causal_pairs,
                output.display()
            );
            Ok(())
        }
        CorpusCommand::Stats { input, json } => {
            let corpus = load_corpus(&input)?;
            let stats = corpus_stats(&corpus);
            if json {
                #[derive(serde::Serialize)]
                struct StatsReport {
                    #[serde(flatten)]
                    stats: corpus::CorpusStats,
                    candidate_rule: &'static str,
                }
                let report = StatsReport {
                    stats,
                    candidate_rule: "all unordered same-document mention pairs; \
                                     cross-sentence candidates are not distance-limited",
                };
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", stats.to_table());
            }
            Ok(())
        }
    }
}

fn run_prompt(command: PromptCommand) -> Result<()> {
    match command {
        PromptCommand::Dump { corpus, query, seed, epoch, m, n, phase, exclude_same_doc } => {
            let corpus = load_corpus(&corpus)?;
            let instances = build_pair_instances(&corpus, ScopeFilter::Both);
            let query_instance = instances
                .iter()
                .find(|i| i.instance_id == query)
                .with_context(|| format!("no instance with id '{query}'"))?;
            let pool = DemoPool::new(&instances, exclude_same_doc);
            let phase = match phase {
                PhaseArg::Train => SamplePhase::Train,
                PhaseArg::Eval => SamplePhase::Eval,
            };
            let demos = sample_demonstrations(&pool, m, n, seed, epoch, query_instance, phase)?;
            let prompt = build_prompt(query_instance, &demos, &corpus)?;
            print!("{}", prompt.annotated_dump());
            Ok(())
        }
    }
}

fn require_tiny(config: &TrainConfig) -> Result<()> {
    if config.encoder != "tiny" && config.encoder != "tiny-reference" {
        bail!(
            "encoder '{}' is not bundled; this build ships the tiny reference encoder \
            (set encoder = \"tiny\")",
            config.encoder
        );
    }
    Ok(())
}

fn apply_train_overrides(mut config: TrainConfig, args: &TrainArgs) -> Result<TrainConfig> {
    if let Some(variant) = args.variant {
        config.variant = variant.into();
        if !config.variant.uses_demonstrations() {
            config.m = 0;
            config.n = 0;
        }
    }
    if let Some(fraction) = args.fraction {
        config.few_shot_fraction = fraction;
    }
    config.validate()?;
    Ok(config)
}

fn plan_for(
    corpus: &Corpus,
    config: &TrainConfig,
    dev_fraction: Option<f64>,
) -> Result<corpus::FoldPlan> {
    Ok(corpus::make_folds_with_dev(corpus, config.scheme, config.seed, dev_fraction)?)
}

fn run_train(args: TrainArgs) -> Result<()> {
    let config = apply_train_overrides(TrainConfig::load(&args.config)?, &args)?;
    require_tiny(&config)?;
    let corpus = load_corpus(&args.corpus)?;
    let plan = plan_for(&corpus, &config, args.dev_fraction)?;
    let folds: Vec<usize> = match args.fold {
        Some(k) => vec![k],
        None => (0..plan.folds.len()).collect(),
    };
    for fold in folds {
        let mut log_buffer = Vec::new();
        let run = run_training::<f64>(&corpus, &plan, fold, &config, &mut log_buffer)?;
        let fold_dir =
            args.out_dir.join(&run.checkpoint.run_id).join(format!("fold{fold}"));
        std::fs::create_dir_all(&fold_dir)?;
        std::fs::write(fold_dir.join("train_log.jsonl"), &log_buffer)?;
        let checkpoint_path = fold_dir.join("checkpoint.json");
        run.checkpoint.save(&checkpoint_path)?;
        println!(
            "fold {fold}: epoch {} checkpoint{} -> {}",
            run.checkpoint.epoch,
            run.checkpoint
                .dev_metric
                .map(|f1| format!(" (dev F1 {f1:.3})"))
                .unwrap_or_default(),
            checkpoint_path.display()
        );
    }
    Ok(())
}

fn evaluate_checkpoint(
    checkpoint: &Checkpoint<f64>,
    corpus: &Corpus,
    scope: ScopeFilter,
    dev_fraction: Option<f64>,
    scheme_override: Option<FoldScheme>,
) -> Result<EvalReport> {
    let mut config = checkpoint.config.clone();
    if let Some(scheme) = scheme_override {
        config.scheme = scheme;
    }
    config.scope = Some(scope);
    let plan = plan_for(corpus, &config, dev_fraction)?;
    let data = fold_data(corpus, &plan, checkpoint.fold_index, &config)?;
    let pool = DemoPool::new(&data.train, config.exclude_same_doc_demos);
    let tokenizer = WordTokenizer::new(checkpoint.encoder.vocabulary().clone());
    let params =
        EvalParams { m: config.m, n: config.n, seed: config.seed, max_len: config.max_len };
    let outcomes = evaluate_instances(
        &checkpoint.encoder,
        &tokenizer,
        corpus,
        &data.test,
        &pool,
        &params,
    )?;
    Ok(report_from_outcomes(&outcomes, Some(checkpoint.fold_index), &config.snapshot_hash()))
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let scope: ScopeFilter = args.scope.into();
    let mut reports = Vec::new();
    let mut run_id = String::new();
    for path in &args.checkpoints {
        let checkpoint: Checkpoint<f64> = Checkpoint::load(path)
            .with_context(|| format!("loading checkpoint {}", path.display()))?;
        run_id = checkpoint.run_id.clone();
        reports.push(evaluate_checkpoint(
            &checkpoint,
            &corpus,
            scope,
            args.dev_fraction,
            args.scheme.map(Into::into),
        )?);
    }
    reports.sort_by_key(|r| r.fold_id);
    // Renumber so aggregation accepts any subset of folds.
    let mut renumbered = reports.clone();
    for (i, report) in renumbered.iter_mut().enumerate() {
        report.fold_id = Some(i);
    }
    let summary = aggregate_folds(&renumbered, renumbered.len(), args.pooled)?;
    let format = if args.json { ReportFormat::Json } else { ReportFormat::Table };
    print!("{}", render_summary(&summary, format));

    let report_dir = args.out_dir.join(&run_id);
    std::fs::create_dir_all(&report_dir)?;
    let mut file = std::fs::File::create(report_dir.join("report.json"))?;
    #[derive(serde::Serialize)]
    struct FullReport<'a> {
        summary: &'a eci_core::eval::FoldSummary,
        folds: &'a [EvalReport],
    }
    file.write_all(
        serde_json::to_string_pretty(&FullReport { summary: &summary, folds: &reports })?
            .as_bytes(),
    )?;
    eprintln!("report written to {}", report_dir.join("report.json").display());
    Ok(())
}

fn run_few_shot_cmd(args: FewShotArgs) -> Result<()> {
    let config = TrainConfig::load(&args.config)?;
    require_tiny(&config)?;
    let corpus = load_corpus(&args.corpus)?;
    let plan = plan_for(&corpus, &config, None)?;
    let mut log = std::io::sink();
    let rows =
        run_few_shot::<f64>(&corpus, &plan, args.fold, &config, &args.fractions, &mut log)?;
    print_rows(&rows);
    Ok(())
}

fn run_sweep_cmd(args: SweepArgs) -> Result<()> {
    let config = TrainConfig::load(&args.config)?;
    require_tiny(&config)?;
    let corpus = load_corpus(&args.corpus)?;
    let plan = plan_for(&corpus, &config, None)?;
    let axis = match args.axis {
        AxisArg::Beta => {
            if args.values.is_empty() {
                SweepAxis::Beta(default_beta_grid())
            } else {
                SweepAxis::Beta(
                    args.values
                        .iter()
                        .map(|v| v.parse::<f64>().context("beta values must be numbers"))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
        }
        AxisArg::DemoCounts => {
            if args.values.is_empty() {
                SweepAxis::DemoCounts(default_demo_grid())
            } else {
                SweepAxis::DemoCounts(
                    args.values
                        .iter()
                        .map(|v| {
                            let (m, n) = v
                                .split_once('x')
                                .context("demo counts look like MxN, e.g. 2x2")?;
                            Ok((m.parse()?, n.parse()?))
                        })
                        .collect::<Result<Vec<_>>>()?,
                )
            }
        }
    };
    let mut log = std::io::sink();
    let rows = run_sweep::<f64>(&corpus, &plan, args.fold, &config, &axis, &mut log)?;
    print_rows(&rows);
    Ok(())
}

fn print_rows(rows: &[eci_core::trainer::experiments::ExperimentRow]) {
    println!("{:<16} {:>7} {:>7} {:>7}", "cell", "P(%)", "R(%)", "F1(%)");
    for row in rows {
        if let Some(m) = &row.report.both {
            println!(
                "{:<16} {:>7.1} {:>7.1} {:>7.1}",
                row.label,
                m.precision * 100.0,
                m.recall * 100.0,
                m.f1 * 100.0
            );
        }
    }
}

fn run_export(args: ExportArgs) -> Result<()> {
    let checkpoint: Checkpoint<f64> = Checkpoint::load(&args.checkpoint)?;
    let corpus = load_corpus(&args.corpus)?;
    let mut config = checkpoint.config.clone();
    config.scope = Some(args.scope.into());
    let plan = plan_for(&corpus, &config, args.dev_fraction)?;
    let data = fold_data(&corpus, &plan, checkpoint.fold_index, &config)?;
    let pool = DemoPool::new(&data.train, config.exclude_same_doc_demos);
    let tokenizer = WordTokenizer::new(checkpoint.encoder.vocabulary().clone());
    let params =
        EvalParams { m: config.m, n: config.n, seed: config.seed, max_len: config.max_len };
    let outcomes = evaluate_instances(
        &checkpoint.encoder,
        &tokenizer,
        &corpus,
        &data.test,
        &pool,
        &params,
    )?;
    export_embeddings(&outcomes, &args.output)?;
    eprintln!("wrote {} rows to {}", outcomes.len(), args.output.display());
    Ok(())
}
