//! Word n-gram language model and perplexity-based subsampling.
//!
//! Text is lowercased and split on whitespace; every non-empty line is a
//! sentence and is prefixed with `n - 1` start markers that act as context
//! only (they are never predicted). The conditional estimate is a linear
//! interpolation over orders `1..=n` of add-k estimates
//! `(c(h, w) + k) / (c(h) + k |V|)`, where `V` is the training vocabulary
//! plus the reserved unknown-word token.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, FilterOutcome};
use crate::error::{Error, Result};
use crate::hashing::doc_rng;

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const STAGE: &str = "perplexity_sample";
pub const MODEL_VERSION: u32 = 1;
pub const RESERVOIR_SIZE: usize = 100_000;

const UNK_ID: u32 = 0;
const BOS_ID: u32 = 1;

/// Sentences of lowercased whitespace tokens, one per non-empty line.
pub fn tokenize(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|line| line.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LmFile {
    version: u32,
    order: usize,
    k: f64,
    weights: Vec<f64>,
    floor: f64,
    vocab: Vec<String>,
    /// Per order: (context ids..., word id) → count.
    counts: Vec<Vec<(Vec<u32>, u64)>>,
}

/// Interpolated add-k word n-gram model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LmFile", into = "LmFile")]
pub struct NGramLm {
    order: usize,
    k: f64,
    weights: Vec<f64>,
    floor: f64,
    vocab: Vec<String>,
    ids: HashMap<String, u32>,
    /// `grams[j]` holds counts of (j context words, word) for order j + 1.
    grams: Vec<HashMap<Vec<u32>, u64>>,
    /// `contexts[j]` holds counts of j-word contexts.
    contexts: Vec<HashMap<Vec<u32>, u64>>,
}

impl TryFrom<LmFile> for NGramLm {
    type Error = Error;

    fn try_from(f: LmFile) -> Result<Self> {
        if f.version != MODEL_VERSION {
            return Err(Error::invalid(format!("unsupported model version {}", f.version)));
        }
        if f.counts.len() != f.order || f.weights.len() != f.order {
            return Err(Error::invalid("model file order mismatch"));
        }
        let mut lm = NGramLm::empty(f.order, f.k, f.weights)?;
        lm.floor = f.floor;
        lm.vocab = f.vocab;
        lm.ids = lm.vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        for (j, table) in f.counts.into_iter().enumerate() {
            for (gram, c) in table {
                lm.add_count(j, gram, c);
            }
        }
        Ok(lm)
    }
}

impl From<NGramLm> for LmFile {
    fn from(lm: NGramLm) -> Self {
        let counts = lm
            .grams
            .into_iter()
            .map(|table| {
                let mut v: Vec<_> = table.into_iter().collect();
                v.sort();
                v
            })
            .collect();
        LmFile {
            version: MODEL_VERSION,
            order: lm.order,
            k: lm.k,
            weights: lm.weights,
            floor: lm.floor,
            vocab: lm.vocab,
            counts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmParams {
    pub order: usize,
    pub k: f64,
    /// Lower bound applied to every conditional probability when scoring.
    pub floor: f64,
}

impl Default for LmParams {
    fn default() -> Self {
        LmParams {
            order: 3,
            k: 0.1,
            floor: 1e-12,
        }
    }
}

impl NGramLm {
    fn empty(order: usize, k: f64, weights: Vec<f64>) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("order must be at least 1"));
        }
        if !(k >= 0.0 && k.is_finite()) {
            return Err(Error::invalid("smoothing k must be non-negative"));
        }
        let sum: f64 = weights.iter().sum();
        if weights.len() != order || weights.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("interpolation weights must be non-negative, one per order, summing to 1"));
        }
        let vocab = vec![UNK.to_string(), BOS.to_string()];
        let ids = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Ok(NGramLm {
            order,
            k,
            weights,
            floor: LmParams::default().floor,
            vocab,
            ids,
            grams: vec![HashMap::new(); order],
            contexts: vec![HashMap::new(); order],
        })
    }

    /// Start an empty model with uniform interpolation weights.
    pub fn new(params: LmParams) -> Result<Self> {
        let w = vec![1.0 / params.order.max(1) as f64; params.order];
        Self::with_weights(params, w)
    }

    pub fn with_weights(params: LmParams, weights: Vec<f64>) -> Result<Self> {
        let mut lm = Self::empty(params.order, params.k, weights)?;
        lm.floor = params.floor;
        Ok(lm)
    }

    fn add_count(&mut self, j: usize, gram: Vec<u32>, c: u64) {
        let ctx = gram[..gram.len() - 1].to_vec();
        *self.contexts[j].entry(ctx).or_default() += c;
        *self.grams[j].entry(gram).or_default() += c;
    }

    fn intern(&mut self, w: &str) -> u32 {
        if let Some(&id) = self.ids.get(w) {
            return id;
        }
        let id = self.vocab.len() as u32;
        self.vocab.push(w.to_string());
        self.ids.insert(w.to_string(), id);
        id
    }

    /// Accumulate counts from one text. Counts are additive, so shards can be
    /// absorbed in any order.
    pub fn absorb(&mut self, text: &str) {
        for sentence in tokenize(text) {
            let mut seq = vec![BOS_ID; self.order - 1];
            for w in &sentence {
                let id = self.intern(w);
                seq.push(id);
            }
            for t in self.order - 1..seq.len() {
                for j in 0..self.order {
                    let gram = seq[t - j..=t].to_vec();
                    self.add_count(j, gram, 1);
                }
            }
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// |V|: training words plus the unknown token.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len() - 1
    }

    /// Predictable words: the training vocabulary and the unknown token.
    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.vocab.iter().filter(|w| *w != BOS).map(String::as_str)
    }

    fn id_of(&self, w: &str) -> u32 {
        match self.ids.get(w) {
            Some(&id) if id != BOS_ID => id,
            _ => UNK_ID,
        }
    }

    fn order_prob(&self, j: usize, gram: &[u32]) -> f64 {
        let v = self.vocab_size() as f64;
        let c = self.grams[j].get(gram).copied().unwrap_or(0) as f64;
        let ctx = self.contexts[j].get(&gram[..gram.len() - 1]).copied().unwrap_or(0) as f64;
        let denom = ctx + self.k * v;
        if denom == 0.0 {
            // k = 0 and an unseen context: fall back to uniform
            return 1.0 / v;
        }
        (c + self.k) / denom
    }

    /// Interpolated P(word | context), where `context` holds the preceding
    /// words (the last `order - 1` are used; missing ones are start markers).
    pub fn prob(&self, context: &[&str], word: &str) -> f64 {
        let mut ids: Vec<u32> = vec![BOS_ID; self.order - 1];
        ids.extend(context.iter().map(|w| self.id_of(w)));
        ids.push(self.id_of(word));
        self.prob_ids(&ids[ids.len() - self.order..])
    }

    fn prob_ids(&self, gram: &[u32]) -> f64 {
        let n = gram.len();
        (0..self.order)
            .map(|j| self.weights[j] * self.order_prob(j, &gram[n - 1 - j..]))
            .sum()
    }

    /// Sum of log P over predicted tokens, and their count.
    pub fn log_prob(&self, text: &str) -> (f64, usize) {
        let mut total = 0.0;
        let mut count = 0;
        for sentence in tokenize(text) {
            let mut seq = vec![BOS_ID; self.order - 1];
            seq.extend(sentence.iter().map(|w| self.id_of(w)));
            for t in self.order - 1..seq.len() {
                let p = self.prob_ids(&seq[t + 1 - self.order..=t]).max(self.floor);
                total += p.ln();
                count += 1;
            }
        }
        (total, count)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_vec(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

pub fn train_ngram_lm<'a>(corpus: impl IntoIterator<Item = &'a Document>, params: LmParams) -> Result<NGramLm> {
    let mut lm = NGramLm::new(params)?;
    let mut seen = false;
    for doc in corpus {
        lm.absorb(&doc.text);
        seen = true;
    }
    if !seen || lm.grams[0].is_empty() {
        return Err(Error::EmptyCorpus("language model".into()));
    }
    Ok(lm)
}

/// `exp(-(1/T) Σ log P(w_t | context))`.
pub fn perplexity(lm: &NGramLm, text: &str) -> Result<f64> {
    let (lp, n) = lm.log_prob(text);
    if n == 0 {
        return Err(Error::invalid("text has no tokens"));
    }
    Ok((-lp / n as f64).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SamplingMode {
    /// Gaussian kernel about the median with spread `sigma`.
    Gaussian { sigma: f64 },
    /// One weight per quartile bin: below q1, [q1, median), [median, q3), ≥ q3.
    Stepwise { weights: [f64; 4] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    #[serde(flatten)]
    pub mode: SamplingMode,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// Global acceptance scale.
    pub scale: f64,
}

impl SamplingPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.q1 <= self.median && self.median <= self.q3) {
            return Err(Error::invalid("quantiles must satisfy q1 <= median <= q3"));
        }
        if !(self.scale >= 0.0) {
            return Err(Error::invalid("scale must be non-negative"));
        }
        match &self.mode {
            SamplingMode::Gaussian { sigma } if !(*sigma > 0.0) => Err(Error::invalid("sigma must be positive")),
            SamplingMode::Stepwise { weights } if weights.iter().any(|w| !(0.0..=1.0).contains(w)) => {
                Err(Error::invalid("stepwise weights must lie in [0, 1]"))
            }
            _ => Ok(()),
        }
    }

    /// Kernel value before scaling.
    fn base(&self, ppl: f64) -> f64 {
        match &self.mode {
            SamplingMode::Gaussian { sigma } => (-(ppl - self.median).powi(2) / (2.0 * sigma * sigma)).exp(),
            SamplingMode::Stepwise { weights } => {
                let bin = if ppl < self.q1 {
                    0
                } else if ppl < self.median {
                    1
                } else if ppl < self.q3 {
                    2
                } else {
                    3
                };
                weights[bin]
            }
        }
    }
}

pub fn acceptance_probability(ppl: f64, policy: &SamplingPolicy) -> f64 {
    (policy.scale * policy.base(ppl)).clamp(0.0, 1.0)
}

/// Which kernel to calibrate, before quantiles are known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    /// `sigma` defaults to the interquartile range divided by 1.349.
    Gaussian {
        #[serde(default)]
        sigma: Option<f64>,
    },
    Stepwise { weights: [f64; 4] },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Gaussian { sigma: None }
    }
}

/// Uniform reservoir sample (Algorithm R).
pub struct Reservoir {
    capacity: usize,
    seen: u64,
    items: Vec<f64>,
    rng: ChaCha8Rng,
}

impl Reservoir {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Reservoir {
            capacity,
            seen: 0,
            items: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn push(&mut self, x: f64) {
        self.seen += 1;
        if self.items.len() < self.capacity {
            self.items.push(x);
        } else {
            let j = self.rng.gen_range(0..self.seen);
            if (j as usize) < self.capacity {
                self.items[j as usize] = x;
            }
        }
    }

    pub fn into_sorted(mut self) -> Vec<f64> {
        self.items.sort_by(f64::total_cmp);
        self.items
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Choose `scale` so that the mean clamped acceptance over `sample` equals
/// `target` (or gets as close as the kernel allows).
pub fn calibrate_scale(sample: &[f64], policy: &SamplingPolicy, target: f64) -> f64 {
    let bases: Vec<f64> = sample.iter().map(|&p| policy.base(p)).collect();
    let mean_at = |c: f64| bases.iter().map(|b| (c * b).min(1.0)).sum::<f64>() / bases.len() as f64;
    let max_base = bases.iter().copied().fold(0.0, f64::max);
    if max_base == 0.0 {
        return 0.0;
    }
    let min_positive = bases.iter().copied().filter(|&b| b > 0.0).fold(f64::INFINITY, f64::min);
    let mut hi = 1.0 / min_positive;
    if mean_at(hi) <= target {
        return hi;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub kept: Vec<Document>,
    pub outcomes: Vec<FilterOutcome>,
    pub policy: SamplingPolicy,
}

/// Two-pass perplexity sampling.
///
/// Pass one scores every document and fits quantiles and the acceptance
/// scale on a reservoir sample; pass two accepts each document independently
/// with a generator derived from `(seed, doc id)`.
pub fn perplexity_sample_stage(
    docs: &[Document],
    lm: &NGramLm,
    kernel: &KernelSpec,
    target_fraction: f64,
    seed: u64,
) -> Result<SampleOutput> {
    if !(target_fraction > 0.0 && target_fraction <= 1.0) {
        return Err(Error::invalid(format!("target fraction {target_fraction} outside (0, 1]")));
    }
    let scores: Vec<Option<f64>> = docs.par_iter().map(|d| perplexity(lm, &d.text).ok()).collect();

    let mut reservoir = Reservoir::new(RESERVOIR_SIZE, seed);
    for s in scores.iter().flatten() {
        reservoir.push(*s);
    }
    let sample = reservoir.into_sorted();
    let (q1, median, q3) = if sample.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        (quantile(&sample, 0.25), quantile(&sample, 0.5), quantile(&sample, 0.75))
    };
    let mode = match kernel {
        KernelSpec::Gaussian { sigma } => {
            let iqr_sigma = (q3 - q1) / 1.349;
            let sigma = sigma.unwrap_or(if iqr_sigma > 0.0 { iqr_sigma } else { 1.0 });
            SamplingMode::Gaussian { sigma }
        }
        KernelSpec::Stepwise { weights } => SamplingMode::Stepwise { weights: *weights },
    };
    let mut policy = SamplingPolicy { mode, q1, median, q3, scale: 1.0 };
    policy.validate()?;
    let keep_all = target_fraction >= 1.0;
    if !sample.is_empty() && !keep_all {
        policy.scale = calibrate_scale(&sample, &policy, target_fraction);
    }

    let outcomes: Vec<FilterOutcome> = docs
        .par_iter()
        .zip(&scores)
        .map(|(doc, score)| match score {
            None => FilterOutcome::rejected(&doc.id, STAGE, "no_tokens"),
            Some(ppl) => {
                let p = if keep_all { 1.0 } else { acceptance_probability(*ppl, &policy) };
                let u: f64 = doc_rng(seed, STAGE, &doc.id).gen();
                let outcome = if u < p {
                    FilterOutcome::kept(&doc.id, STAGE)
                } else {
                    FilterOutcome::rejected(&doc.id, STAGE, "perplexity_sampled_out")
                };
                outcome.with_score("perplexity", *ppl).with_score("accept_prob", p)
            }
        })
        .collect();
    let kept = docs
        .iter()
        .zip(&outcomes)
        .filter(|(_, o)| o.is_kept())
        .map(|(d, _)| d.clone())
        .collect();
    Ok(SampleOutput { kept, outcomes, policy })
}

/// Perplexity histogram summary used in reports.
pub fn describe(scores: &[f64]) -> BTreeMap<String, f64> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = BTreeMap::new();
    if sorted.is_empty() {
        return out;
    }
    for (name, q) in [("q1", 0.25), ("median", 0.5), ("q3", 0.75)] {
        out.insert(name.to_string(), quantile(&sorted, q));
    }
    out.insert("min".into(), sorted[0]);
    out.insert("max".into(), sorted[sorted.len() - 1]);
    out
}
