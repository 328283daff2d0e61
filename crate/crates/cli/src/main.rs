use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rigopipe_core::bpe::{self, BpeConfig, BpeVocab};
use rigopipe_core::cleaners::{self, PunctuationRules};
use rigopipe_core::corpus::{self, WriteOptions};
use rigopipe_core::dedup::DedupParams;
use rigopipe_core::evalstats::{self, ScoreMatrix};
use rigopipe_core::langid;
use rigopipe_core::pipeline::{self, PipelineConfig, RunReport, StageConfig, StageKind, SEED_ENV};
use rigopipe_core::ppl::{self, KernelSpec, LmParams};
use rigopipe_core::qaalign::{self, QaParams};
use rigopipe_core::quality::{self, TrainParams};
use rigopipe_core::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "rigopipe", version, about = "Spanish corpus curation and evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read raw JSONL or plain-text files and write a sharded corpus.
    Ingest(IngestArgs),
    /// Train character n-gram language profiles from seed texts.
    LangidTrain(LangidTrainArgs),
    /// Language, length, mojibake and punctuation filters.
    Clean(CleanArgs),
    /// Near-duplicate removal with MinHash LSH.
    Dedup(DedupArgs),
    /// Train the word n-gram model used for perplexity sampling.
    PplTrain(PplTrainArgs),
    /// Subsample documents by perplexity.
    PplSample(PplSampleArgs),
    /// Train the hashed-feature quality classifier.
    QualityTrain(QualityTrainArgs),
    /// Keep documents by quality score under the Pareto rule.
    QualityFilter(QualityFilterArgs),
    /// Train a byte-level BPE tokenizer.
    TokTrain(TokTrainArgs),
    /// Encode text, one JSON encoding per input line.
    TokEncode(TokEncodeArgs),
    /// Build aligned extractive QA features from a SQuAD-format file.
    QaProcess(QaProcessArgs),
    /// Average ranks, Friedman and Nemenyi over a score table.
    EvalStats(EvalStatsArgs),
    /// Run a full pipeline from a TOML config.
    Run(RunArgs),
}

#[derive(Args)]
struct SeedArg {
    /// Global seed.
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CorpusIo {
    /// Corpus file or directory.
    #[arg(long, short)]
    input: PathBuf,
    /// Output directory.
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, default_value_t = WriteOptions::default().shard_size)]
    shard_size: usize,
    /// Gzip output shards.
    #[arg(long)]
    compress: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct IngestArgs {
    /// Input files or directories.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, default_value_t = WriteOptions::default().shard_size)]
    shard_size: usize,
    #[arg(long)]
    compress: bool,
}

#[derive(Args)]
struct LangidTrainArgs {
    /// Directory of `<lang>.txt` seed files.
    #[arg(long)]
    seeds: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, default_value_t = langid::DEFAULT_ORDER)]
    order: usize,
    #[arg(long, default_value_t = langid::DEFAULT_K)]
    k: f64,
}

#[derive(Args)]
struct CleanArgs {
    #[command(flatten)]
    io: CorpusIo,
    /// Language profiles; enables the language filter.
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long, default_value = "es")]
    lang: String,
    #[arg(long, default_value_t = langid::DEFAULT_THRESHOLD)]
    lang_threshold: f64,
    #[arg(long, default_value_t = cleaners::DEFAULT_MIN_CHARS)]
    min_chars: usize,
    /// JSON file with punctuation rules.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Skip the punctuation filter.
    #[arg(long)]
    no_punctuation: bool,
}

#[derive(Args)]
struct DedupArgs {
    #[command(flatten)]
    io: CorpusIo,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long, default_value_t = DedupParams::default().num_perm)]
    num_perm: usize,
    #[arg(long, default_value_t = DedupParams::default().bands)]
    bands: usize,
    #[arg(long, default_value_t = DedupParams::default().rows)]
    rows: usize,
    #[arg(long, default_value_t = DedupParams::default().threshold)]
    threshold: f64,
    #[arg(long, default_value_t = DedupParams::default().shingle_width)]
    shingle_width: usize,
    /// Confirm candidates with exact shingle Jaccard.
    #[arg(long)]
    verify_text: bool,
}

#[derive(Args)]
struct PplTrainArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, default_value_t = LmParams::default().order)]
    order: usize,
    #[arg(long, default_value_t = LmParams::default().k)]
    k: f64,
}

#[derive(Args)]
struct PplSampleArgs {
    #[command(flatten)]
    io: CorpusIo,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0.6)]
    target_fraction: f64,
    /// Gaussian spread; defaults to IQR / 1.349.
    #[arg(long, conflicts_with = "stepwise")]
    sigma: Option<f64>,
    /// Four comma-separated quartile weights.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    stepwise: Option<Vec<f64>>,
    /// Only sample documents from these sources.
    #[arg(long, value_delimiter = ',')]
    sources: Option<Vec<String>>,
}

#[derive(Args)]
struct QualityTrainArgs {
    /// JSONL with `text` and `label` ("valid" / "non-valid").
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long, default_value_t = TrainParams::default().dim)]
    dim: usize,
    #[arg(long, default_value_t = TrainParams::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainParams::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = TrainParams::default().l2)]
    l2: f64,
}

#[derive(Args)]
struct QualityFilterArgs {
    #[command(flatten)]
    io: CorpusIo,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = quality::DEFAULT_ALPHA)]
    alpha: f64,
}

#[derive(Args)]
struct TokTrainArgs {
    /// Training corpus file or directory.
    #[arg(long, short)]
    input: PathBuf,
    /// Directory for merges.txt and vocab.json.
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, default_value_t = bpe::DEFAULT_VOCAB_SIZE)]
    vocab_size: usize,
    /// Special tokens, comma separated, in id order.
    #[arg(long, value_delimiter = ',')]
    specials: Option<Vec<String>>,
}

#[derive(Args)]
struct TokEncodeArgs {
    /// Tokenizer directory.
    #[arg(long)]
    vocab: PathBuf,
    /// Text to encode; stdin lines otherwise.
    #[arg(long)]
    text: Option<String>,
}

#[derive(Args)]
struct QaProcessArgs {
    /// SQuAD-format JSON.
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, default_value_t = QaParams::default().max_len)]
    max_len: usize,
    #[arg(long, default_value_t = QaParams::default().doc_stride)]
    doc_stride: usize,
    #[arg(long, default_value_t = QaParams::default().max_query_len)]
    max_query_len: usize,
}

#[derive(Args)]
struct EvalStatsArgs {
    /// CSV with a dataset column followed by one column per model.
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, default_value_t = evalstats::DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Write a critical-difference diagram (SVG plus CSV).
    #[arg(long)]
    diagram: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides the config seed and the environment.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

fn print_json(value: serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &value)?;
    writeln!(out)?;
    Ok(())
}

fn run_stage_list(io: &CorpusIo, seed: u64, stages: Vec<StageConfig>) -> Result<RunReport> {
    let config = PipelineConfig {
        seed,
        input: io.input.clone(),
        output: io.output.clone(),
        threads: io.threads,
        shard_size: io.shard_size,
        compress: io.compress,
        stages,
    };
    let report = pipeline::run_pipeline(&config)?;
    print_json(serde_json::to_value(&report.stages)?)?;
    Ok(report)
}

fn read_texts(path: &Path) -> Result<Vec<String>> {
    Ok(corpus::load_documents(path)?.into_iter().map(|d| d.text).collect())
}

fn ingest(a: IngestArgs) -> Result<()> {
    let mut docs = Vec::new();
    for p in &a.inputs {
        docs.extend(corpus::load_documents(p)?);
    }
    let n = docs.len();
    let manifest = corpus::write_corpus(docs, &a.output, WriteOptions { shard_size: a.shard_size, compress: a.compress })?;
    eprintln!("ingested {n} documents into {} shards", manifest.shards.len());
    Ok(())
}

fn clean(a: CleanArgs) -> Result<()> {
    let mut stages = Vec::new();
    if let Some(profiles) = a.profiles {
        stages.push(StageConfig::new(
            "langid",
            StageKind::Langid { profiles, target: a.lang, threshold: a.lang_threshold },
        ));
    }
    stages.push(StageConfig::new("length", StageKind::Length { min_chars: a.min_chars }));
    stages.push(StageConfig::new("mojibake", StageKind::Mojibake));
    if !a.no_punctuation {
        let rules: PunctuationRules = match &a.rules {
            Some(p) => serde_json::from_slice(&std::fs::read(p).with_context(|| p.display().to_string())?)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => PunctuationRules::default(),
        };
        stages.push(StageConfig::new("punctuation", StageKind::Punctuation { rules, per_source: Default::default() }));
    }
    run_stage_list(&a.io, 0, stages)?;
    Ok(())
}

fn dedup(a: DedupArgs) -> Result<()> {
    let params = DedupParams {
        num_perm: a.num_perm,
        bands: a.bands,
        rows: a.rows,
        threshold: a.threshold,
        shingle_width: a.shingle_width,
        verify_text: a.verify_text,
        ..Default::default()
    };
    run_stage_list(&a.io, a.seed.seed, vec![StageConfig::new("dedup", StageKind::Dedup { params })])?;
    Ok(())
}

fn ppl_train(a: PplTrainArgs) -> Result<()> {
    let docs = corpus::load_documents(&a.input)?;
    let lm = ppl::train_ngram_lm(&docs, LmParams { order: a.order, k: a.k, ..Default::default() })?;
    lm.save(&a.output)?;
    eprintln!("trained order-{} model, vocabulary {}", lm.order(), lm.vocab_size());
    Ok(())
}

fn ppl_sample(a: PplSampleArgs) -> Result<()> {
    let kernel = match a.stepwise {
        Some(w) => KernelSpec::Stepwise { weights: [w[0], w[1], w[2], w[3]] },
        None => KernelSpec::Gaussian { sigma: a.sigma },
    };
    let mut stage = StageConfig::new(
        "perplexity_sample",
        StageKind::PerplexitySample { model: a.model, target_fraction: a.target_fraction, kernel },
    );
    stage.sources = a.sources;
    run_stage_list(&a.io, a.seed.seed, vec![stage])?;
    Ok(())
}

fn quality_train(a: QualityTrainArgs) -> Result<()> {
    let data = quality::read_labeled(&a.input)?;
    let params = TrainParams { dim: a.dim, epochs: a.epochs, lr: a.lr, l2: a.l2, seed: a.seed.seed };
    let model = quality::train_quality_model(&data, &params)?;
    model.save(&a.output)?;
    print_json(serde_json::json!({
        "examples": data.len(),
        "train_accuracy": quality::accuracy(&model, &data),
        "epoch_losses": model.epoch_losses,
    }))
}

fn quality_filter(a: QualityFilterArgs) -> Result<()> {
    let stage = StageConfig::new("quality", StageKind::Quality { model: a.model, alpha: a.alpha });
    run_stage_list(&a.io, a.seed.seed, vec![stage])?;
    Ok(())
}

fn tok_train(a: TokTrainArgs) -> Result<()> {
    let texts = read_texts(&a.input)?;
    let mut config = BpeConfig { vocab_size: a.vocab_size, ..Default::default() };
    if let Some(s) = a.specials {
        config.specials = s;
    }
    let vocab = bpe::train_bpe(&texts, &config)?;
    vocab.save(&a.output)?;
    eprintln!("vocabulary {} ({} merges)", vocab.vocab_size(), vocab.merges().len());
    Ok(())
}

fn tok_encode(a: TokEncodeArgs) -> Result<()> {
    let vocab = BpeVocab::load(&a.vocab)?;
    let mut out = std::io::stdout().lock();
    let mut emit = |line: &str| -> Result<()> {
        serde_json::to_writer(&mut out, &vocab.encode(line))?;
        writeln!(out)?;
        Ok(())
    };
    match a.text {
        Some(t) => emit(&t)?,
        None => {
            for line in std::io::stdin().lock().lines() {
                emit(&line?)?;
            }
        }
    }
    Ok(())
}

fn qa_process(a: QaProcessArgs) -> Result<()> {
    let examples = qaalign::read_squad(&a.input)?;
    let vocab = BpeVocab::load(&a.vocab)?;
    let params = QaParams { max_len: a.max_len, doc_stride: a.doc_stride, max_query_len: a.max_query_len };
    let out = qaalign::process_examples(&examples, &vocab, &params)?;
    qaalign::write_output(&out, &a.output)?;
    print_json(serde_json::json!({
        "examples": out.stats.examples,
        "features": out.stats.features,
        "verified": out.stats.verified,
        "excluded": out.stats.excluded,
        "coverage": out.stats.coverage(),
        "reasons": out.stats.reasons,
    }))
}

fn eval_stats(a: EvalStatsArgs) -> Result<()> {
    let m = ScoreMatrix::from_csv(&a.input)?;
    let report = evalstats::compare_models(&m, a.epsilon, a.alpha)?;
    let imputed = evalstats::impute_missing(&m, a.epsilon)?;
    let chi2 = evalstats::friedman_statistic(&imputed)?;
    if let Some(path) = &a.diagram {
        evalstats::render_cd_diagram(&report, path)?;
    }
    print_json(serde_json::json!({ "friedman_chi2": chi2, "report": report }))
}

fn run(a: RunArgs) -> Result<()> {
    let mut config = PipelineConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if a.threads.is_some() {
        config.threads = a.threads;
    }
    let report = pipeline::run_pipeline(&config)?;
    eprintln!(
        "{} -> {} documents in {:.1}s; report at {}",
        report.input_documents,
        report.output_documents,
        report.seconds,
        config.output.join(pipeline::REPORT_FILE).display()
    );
    print_json(serde_json::to_value(&report.stages)?)
}

fn langid_train(a: LangidTrainArgs) -> Result<()> {
    let seeds = langid::read_seed_dir(&a.seeds)?;
    let profiles = langid::train_profiles(&seeds, a.order, a.k)?;
    langid::save_profiles(&a.output, &profiles)?;
    eprintln!("trained {} profiles: {}", profiles.len(), seeds.keys().cloned().collect::<Vec<_>>().join(", "));
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<Error>() {
        return match e.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Internal => 4,
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() || err.downcast_ref::<serde_json::Error>().is_some() {
        return 3;
    }
    4
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::LangidTrain(a) => langid_train(a),
        Command::Clean(a) => clean(a),
        Command::Dedup(a) => dedup(a),
        Command::PplTrain(a) => ppl_train(a),
        Command::PplSample(a) => ppl_sample(a),
        Command::QualityTrain(a) => quality_train(a),
        Command::QualityFilter(a) => quality_filter(a),
        Command::TokTrain(a) => tok_train(a),
        Command::TokEncode(a) => tok_encode(a),
        Command::QaProcess(a) => qa_process(a),
        Command::EvalStats(a) => eval_stats(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
