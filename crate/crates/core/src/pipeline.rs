//! Config-driven orchestration of the filtering stages.
//!
//! A run loads the input corpus, applies the enabled stages in order, and
//! writes:
//!
//! * `outcomes/<stage>.jsonl` with one [`FilterOutcome`] per processed document,
//! * `corpus/` with the kept documents as checksummed shards,
//! * `report.json` with per-stage counts, the effective seed and the config.
//!
//! Stages may be restricted to a set of sources; documents from other sources
//! pass through untouched and are counted as bypassed.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cleaners::{self, PunctuationRules};
use crate::corpus::{self, Document, FilterOutcome, ShardManifest, WriteOptions};
use crate::dedup::{self, DedupParams};
use crate::error::{Error, Result};
use crate::hashing::hash_str;
use crate::langid;
use crate::ppl::{self, KernelSpec, NGramLm};
use crate::quality::{self, QualityModel};

pub const SEED_ENV: &str = "RIGOPIPE_SEED";
pub const REPORT_FILE: &str = "report.json";
pub const OUTCOMES_DIR: &str = "outcomes";
pub const CORPUS_DIR: &str = "corpus";

fn default_true() -> bool {
    true
}

fn default_threshold() -> f64 {
    langid::DEFAULT_THRESHOLD
}

fn default_min_chars() -> usize {
    cleaners::DEFAULT_MIN_CHARS
}

fn default_fraction() -> f64 {
    0.6
}

fn default_alpha() -> f64 {
    quality::DEFAULT_ALPHA
}

fn default_shard_size() -> usize {
    WriteOptions::default().shard_size
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageKind {
    Langid {
        profiles: PathBuf,
        target: String,
        #[serde(default = "default_threshold")]
        threshold: f64,
    },
    Length {
        #[serde(default = "default_min_chars")]
        min_chars: usize,
    },
    Mojibake,
    Punctuation {
        #[serde(default)]
        rules: PunctuationRules,
        /// Rules replacing `rules` for documents of the named sources.
        #[serde(default)]
        per_source: BTreeMap<String, PunctuationRules>,
    },
    PerplexitySample {
        model: PathBuf,
        #[serde(default = "default_fraction")]
        target_fraction: f64,
        #[serde(default)]
        kernel: KernelSpec,
    },
    Dedup {
        #[serde(default)]
        params: DedupParams,
    },
    Quality {
        model: PathBuf,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
}

impl StageKind {
    pub fn label(&self) -> &'static str {
        match self {
            StageKind::Langid { .. } => "langid",
            StageKind::Length { .. } => "length",
            StageKind::Mojibake => "mojibake",
            StageKind::Punctuation { .. } => "punctuation",
            StageKind::PerplexitySample { .. } => "perplexity_sample",
            StageKind::Dedup { .. } => "dedup",
            StageKind::Quality { .. } => "quality",
        }
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        match self {
            StageKind::Langid { profiles, .. } => vec![profiles],
            StageKind::PerplexitySample { model, .. } | StageKind::Quality { model, .. } => vec![model],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub name: String,
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Restrict the stage to these sources.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sources: Option<Vec<String>>,
    #[serde(flatten)]
    pub kind: StageKind,
}

impl StageConfig {
    pub fn new(name: impl Into<String>, kind: StageKind) -> Self {
        StageConfig { name: name.into(), enabled: true, sources: None, kind }
    }

    fn applies_to(&self, doc: &Document) -> bool {
        self.sources.as_ref().map_or(true, |s| s.iter().any(|x| *x == doc.source))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub input: PathBuf,
    pub output: PathBuf,
    /// Worker threads; unset uses all cores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default = "default_shard_size")]
    pub shard_size: usize,
    #[serde(default)]
    pub compress: bool,
    #[serde(default)]
    pub stages: Vec<StageConfig>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse a config file; relative paths are taken relative to its
    /// directory and `RIGOPIPE_SEED` overrides the seed.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input);
        fix(&mut self.output);
        for s in &mut self.stages {
            for p in s.kind.paths_mut() {
                fix(p);
            }
        }
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for s in &self.stages {
            if s.name.is_empty() || s.name.contains(['/', '\\']) {
                return Err(Error::Config(format!("invalid stage name {:?}", s.name)));
            }
            if !names.insert(&s.name) {
                return Err(Error::Config(format!("duplicate stage name {}", s.name)));
            }
        }
        if self.shard_size == 0 {
            return Err(Error::Config("shard_size must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(())
    }

    /// The default stage order, with the quality stage present but disabled.
    pub fn default_stages(langid_profiles: PathBuf, lm: PathBuf, quality_model: PathBuf) -> Vec<StageConfig> {
        vec![
            StageConfig::new(
                "langid",
                StageKind::Langid { profiles: langid_profiles, target: "es".into(), threshold: default_threshold() },
            ),
            StageConfig::new("length", StageKind::Length { min_chars: default_min_chars() }),
            StageConfig::new("mojibake", StageKind::Mojibake),
            StageConfig::new(
                "punctuation",
                StageKind::Punctuation { rules: PunctuationRules::default(), per_source: BTreeMap::new() },
            ),
            StageConfig {
                sources: Some(vec!["mc4".into()]),
                ..StageConfig::new(
                    "perplexity_sample",
                    StageKind::PerplexitySample { model: lm, target_fraction: default_fraction(), kernel: KernelSpec::default() },
                )
            },
            StageConfig::new("dedup", StageKind::Dedup { params: DedupParams::default() }),
            StageConfig {
                enabled: false,
                ..StageConfig::new("quality", StageKind::Quality { model: quality_model, alpha: default_alpha() })
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub name: String,
    pub kind: String,
    pub docs_in: usize,
    pub docs_out: usize,
    /// Documents outside the stage's sources, passed through unchanged.
    pub bypassed: usize,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub rejected: BTreeMap<String, u64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub input_documents: usize,
    pub output_documents: usize,
    pub stages: Vec<StageSummary>,
    pub manifest: ShardManifest,
    pub seconds: f64,
    pub config: PipelineConfig,
}

impl RunReport {
    pub fn stage(&self, name: &str) -> Option<&StageSummary> {
        self.stages.iter().find(|s| s.name == name)
    }
}

fn text_bytes(docs: &[Document]) -> u64 {
    docs.iter().map(|d| d.text.len() as u64).sum()
}

fn in_stage(stage: &str, doc_id: &str, e: Error) -> Error {
    Error::Stage { stage: stage.to_string(), doc_id: doc_id.to_string(), source: Box::new(e) }
}

fn load_err(stage: &str, e: Error) -> Error {
    in_stage(stage, "-", e)
}

/// Apply one stage to the documents it covers.
fn apply_stage(stage: &StageConfig, docs: Vec<Document>, seed: u64) -> Result<(Vec<Document>, Vec<FilterOutcome>)> {
    let name = stage.name.as_str();
    let stage_seed = hash_str(name, seed);
    match &stage.kind {
        StageKind::Langid { profiles, target, threshold } => {
            let profiles = langid::load_profiles(profiles).map_err(|e| load_err(name, e))?;
            let outcomes = docs
                .par_iter()
                .map(|d| langid::language_filter_stage(d, &profiles, target, *threshold).map_err(|e| in_stage(name, &d.id, e)))
                .collect::<Result<Vec<_>>>()?;
            Ok((docs, outcomes))
        }
        StageKind::Length { min_chars } => {
            let outcomes = docs.par_iter().map(|d| cleaners::length_filter_stage(d, *min_chars)).collect();
            Ok((docs, outcomes))
        }
        StageKind::Mojibake => {
            let (docs, outcomes) = docs.par_iter().map(cleaners::mojibake_stage).unzip();
            Ok((docs, outcomes))
        }
        StageKind::Punctuation { rules, per_source } => {
            rules.validate().map_err(|e| load_err(name, e))?;
            for r in per_source.values() {
                r.validate().map_err(|e| load_err(name, e))?;
            }
            let outcomes = docs
                .par_iter()
                .map(|d| cleaners::punctuation_filter_stage(d, per_source.get(&d.source).unwrap_or(rules)))
                .collect();
            Ok((docs, outcomes))
        }
        StageKind::PerplexitySample { model, target_fraction, kernel } => {
            let lm = NGramLm::load(model).map_err(|e| load_err(name, e))?;
            let out = ppl::perplexity_sample_stage(&docs, &lm, kernel, *target_fraction, stage_seed)
                .map_err(|e| load_err(name, e))?;
            Ok((docs, out.outcomes))
        }
        StageKind::Dedup { params } => {
            let params = DedupParams { seed: params.seed ^ seed, ..*params };
            let out = dedup::deduplicate(docs.clone(), &params).map_err(|e| load_err(name, e))?;
            let outcomes = out.outcomes(&docs);
            Ok((docs, outcomes))
        }
        StageKind::Quality { model, alpha } => {
            let model = QualityModel::load(model).map_err(|e| load_err(name, e))?;
            let outcomes = quality::quality_filter_stage(&docs, &model, *alpha, stage_seed).map_err(|e| load_err(name, e))?;
            Ok((docs, outcomes))
        }
    }
}

/// Outcomes carry the configured stage name so that two stages of the same
/// kind stay distinguishable.
fn rename(mut outcomes: Vec<FilterOutcome>, name: &str) -> Vec<FilterOutcome> {
    for o in &mut outcomes {
        o.stage = name.to_string();
    }
    outcomes
}

/// Run the enabled stages over in-memory documents.
pub fn run_stages(
    stages: &[StageConfig],
    mut docs: Vec<Document>,
    seed: u64,
    mut on_stage: impl FnMut(&StageSummary, &[FilterOutcome]) -> Result<()>,
) -> Result<Vec<Document>> {
    for stage in stages.iter().filter(|s| s.enabled) {
        let started = Instant::now();
        let docs_in = docs.len();
        let bytes_in = text_bytes(&docs);
        let (covered, bypassed): (Vec<(usize, Document)>, Vec<(usize, Document)>) =
            docs.into_iter().enumerate().partition(|(_, d)| stage.applies_to(d));
        let (positions, covered): (Vec<usize>, Vec<Document>) = covered.into_iter().unzip();
        let (processed, outcomes) = apply_stage(stage, covered, seed)?;
        let outcomes = rename(outcomes, &stage.name);
        if outcomes.len() != processed.len() {
            return Err(Error::Invariant(format!("stage {} returned {} outcomes for {} documents", stage.name, outcomes.len(), processed.len())));
        }
        let mut merged: Vec<(usize, Document)> = positions
            .into_iter()
            .zip(processed.into_iter().zip(&outcomes))
            .filter(|(_, (_, o))| o.is_kept())
            .map(|(p, (d, _))| (p, d))
            .collect();
        let n_bypassed = bypassed.len();
        merged.extend(bypassed);
        merged.sort_by_key(|(p, _)| *p);
        docs = merged.into_iter().map(|(_, d)| d).collect();

        let report = corpus::stage_report(&outcomes);
        let summary = StageSummary {
            name: stage.name.clone(),
            kind: stage.kind.label().to_string(),
            docs_in,
            docs_out: docs.len(),
            bypassed: n_bypassed,
            bytes_in,
            bytes_out: text_bytes(&docs),
            rejected: report.stages.get(&stage.name).map(|c| c.rejected.clone()).unwrap_or_default(),
            seconds: started.elapsed().as_secs_f64(),
        };
        on_stage(&summary, &outcomes)?;
    }
    Ok(docs)
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport> {
    config.validate()?;
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| run_inner(config)),
        None => run_inner(config),
    }
}

fn run_inner(config: &PipelineConfig) -> Result<RunReport> {
    let started = Instant::now();
    let docs = corpus::load_documents(&config.input)?;
    let input_documents = docs.len();
    let out = &config.output;
    let outcomes_dir = out.join(OUTCOMES_DIR);
    fs::create_dir_all(&outcomes_dir).map_err(|e| Error::io(&outcomes_dir, e))?;

    let mut stages = Vec::new();
    let kept = run_stages(&config.stages, docs, config.seed, |summary, outcomes| {
        corpus::write_outcomes(outcomes, outcomes_dir.join(format!("{}.jsonl", summary.name)))?;
        stages.push(summary.clone());
        Ok(())
    })?;
    let output_documents = kept.len();
    let corpus_dir = out.join(CORPUS_DIR);
    if corpus_dir.exists() {
        fs::remove_dir_all(&corpus_dir).map_err(|e| Error::io(&corpus_dir, e))?;
    }
    let manifest = corpus::write_corpus(kept, &corpus_dir, WriteOptions { shard_size: config.shard_size, compress: config.compress })?;
    let report = RunReport {
        seed: config.seed,
        input_documents,
        output_documents,
        stages,
        manifest,
        seconds: started.elapsed().as_secs_f64(),
        config: config.clone(),
    };
    let path = out.join(REPORT_FILE);
    fs::write(&path, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
