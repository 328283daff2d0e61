//! Character n-gram naive Bayes language identification.
//!
//! Each language gets an add-k smoothed conditional model
//! `P(c | previous n-1 chars)` over a shared alphabet. Text is NFC-normalized,
//! lowercased, whitespace-collapsed and padded with one boundary symbol on
//! each side; an n-gram is any length-`n` window of the padded text that
//! contains at least one real character. A document's posterior is the
//! softmax of the per-language total log-likelihood under uniform priors.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::{Document, FilterOutcome};
use crate::error::{Error, Result};

pub const BOUNDARY: char = '\u{2}';
pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_K: f64 = 0.5;
pub const DEFAULT_THRESHOLD: f64 = 0.8;
/// Texts with fewer non-whitespace characters are not classified.
pub const MIN_CHARS: usize = 20;

pub const STAGE: &str = "langid";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProfileFile {
    language: String,
    n: usize,
    k: f64,
    alphabet_size: usize,
    total_mass: f64,
    table: BTreeMap<String, f64>,
    contexts: BTreeMap<String, u64>,
}

/// Trained model for one language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ProfileFile", into = "ProfileFile")]
pub struct LanguageProfile {
    pub language: String,
    pub n: usize,
    pub smoothing_k: f64,
    /// Total number of n-grams seen in training.
    pub total_mass: f64,
    alphabet_size: usize,
    logprob: HashMap<String, f64>,
    contexts: HashMap<String, u64>,
}

impl From<ProfileFile> for LanguageProfile {
    fn from(f: ProfileFile) -> Self {
        LanguageProfile {
            language: f.language,
            n: f.n,
            smoothing_k: f.k,
            total_mass: f.total_mass,
            alphabet_size: f.alphabet_size,
            logprob: f.table.into_iter().collect(),
            contexts: f.contexts.into_iter().collect(),
        }
    }
}

impl From<LanguageProfile> for ProfileFile {
    fn from(p: LanguageProfile) -> Self {
        ProfileFile {
            language: p.language,
            n: p.n,
            k: p.smoothing_k,
            alphabet_size: p.alphabet_size,
            total_mass: p.total_mass,
            table: p.logprob.into_iter().collect(),
            contexts: p.contexts.into_iter().collect(),
        }
    }
}

impl LanguageProfile {
    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    /// Natural-log probability of `ngram`'s last character given the rest.
    pub fn log_prob(&self, ngram: &str) -> f64 {
        if let Some(&lp) = self.logprob.get(ngram) {
            return lp;
        }
        let ctx_end = ngram.char_indices().last().map_or(0, |(i, _)| i);
        self.unseen_log_prob(&ngram[..ctx_end])
    }

    fn unseen_log_prob(&self, context: &str) -> f64 {
        let c = self.contexts.get(context).copied().unwrap_or(0) as f64;
        (self.smoothing_k / (c + self.smoothing_k * self.alphabet_size as f64)).ln()
    }

    /// Total log-likelihood of already-normalized, padded characters.
    fn log_likelihood(&self, padded: &[char]) -> f64 {
        let mut key = String::new();
        let mut total = 0.0;
        for_each_ngram(padded, self.n, |window| {
            key.clear();
            key.extend(window);
            total += self.log_prob(&key);
        });
        total
    }
}

/// NFC, lowercase, whitespace collapsed, boundary-padded.
pub fn normalize(text: &str) -> Vec<char> {
    let mut out = vec![BOUNDARY];
    let mut pending_space = false;
    for c in text.nfc().flat_map(char::to_lowercase) {
        if c.is_whitespace() || c.is_control() {
            pending_space = out.len() > 1;
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.push(c);
    }
    out.push(BOUNDARY);
    out
}

fn for_each_ngram(padded: &[char], n: usize, mut f: impl FnMut(&[char])) {
    if padded.len() < n {
        return;
    }
    for window in padded.windows(n) {
        if window.iter().any(|&c| c != BOUNDARY) {
            f(window);
        }
    }
}

/// Train one profile per language over a shared alphabet.
pub fn train_profiles(
    corpora: &BTreeMap<String, Vec<String>>,
    n: usize,
    k: f64,
) -> Result<Vec<LanguageProfile>> {
    if !(1..=5).contains(&n) {
        return Err(Error::invalid(format!("n-gram order {n} outside [1, 5]")));
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::invalid("smoothing k must be positive"));
    }
    let mut alphabet = std::collections::BTreeSet::from([BOUNDARY]);
    let mut normalized = BTreeMap::new();
    for (lang, docs) in corpora {
        let texts: Vec<Vec<char>> = docs
            .iter()
            .map(|d| normalize(d))
            .filter(|p| p.len() > 2)
            .collect();
        if texts.is_empty() {
            return Err(Error::EmptyCorpus(format!("language {lang}")));
        }
        for t in &texts {
            alphabet.extend(t.iter().copied());
        }
        normalized.insert(lang.clone(), texts);
    }
    let v = alphabet.len() as f64;

    let mut profiles = Vec::with_capacity(normalized.len());
    for (lang, texts) in normalized {
        let mut grams: HashMap<String, u64> = HashMap::new();
        let mut contexts: HashMap<String, u64> = HashMap::new();
        let mut total = 0u64;
        for t in &texts {
            for_each_ngram(t, n, |w| {
                let gram: String = w.iter().collect();
                let ctx: String = w[..n - 1].iter().collect();
                *grams.entry(gram).or_default() += 1;
                *contexts.entry(ctx).or_default() += 1;
                total += 1;
            });
        }
        let logprob = grams
            .into_iter()
            .map(|(g, c)| {
                let ctx_end = g.char_indices().last().map_or(0, |(i, _)| i);
                let cc = contexts[&g[..ctx_end]] as f64;
                let lp = ((c as f64 + k) / (cc + k * v)).ln();
                (g, lp)
            })
            .collect();
        profiles.push(LanguageProfile {
            language: lang,
            n,
            smoothing_k: k,
            total_mass: total as f64,
            alphabet_size: alphabet.len(),
            logprob,
            contexts,
        });
    }
    Ok(profiles)
}

fn check_length(text: &str, min_chars: usize) -> Result<()> {
    let found = text.chars().filter(|c| !c.is_whitespace()).count();
    if found < min_chars {
        return Err(Error::InsufficientText {
            found,
            required: min_chars,
        });
    }
    Ok(())
}

/// Per-language total log-likelihoods, in profile order.
pub fn log_likelihoods(text: &str, profiles: &[LanguageProfile]) -> Vec<f64> {
    let padded = normalize(text);
    profiles.iter().map(|p| p.log_likelihood(&padded)).collect()
}

/// Softmax over log-likelihoods, shifted by the maximum for stability.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Posterior over languages with uniform priors, using the default length floor.
pub fn language_posteriors(text: &str, profiles: &[LanguageProfile]) -> Result<BTreeMap<String, f64>> {
    language_posteriors_with_floor(text, profiles, MIN_CHARS)
}

pub fn language_posteriors_with_floor(
    text: &str,
    profiles: &[LanguageProfile],
    min_chars: usize,
) -> Result<BTreeMap<String, f64>> {
    if profiles.is_empty() {
        return Err(Error::invalid("no language profiles"));
    }
    check_length(text, min_chars)?;
    let post = softmax(&log_likelihoods(text, profiles));
    Ok(profiles
        .iter()
        .zip(post)
        .map(|(p, q)| (p.language.clone(), q))
        .collect())
}

/// Keep `doc` iff the posterior of `target` reaches `threshold`.
pub fn language_filter_stage(
    doc: &Document,
    profiles: &[LanguageProfile],
    target: &str,
    threshold: f64,
) -> Result<FilterOutcome> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("language threshold {threshold} outside (0, 1)")));
    }
    if !profiles.iter().any(|p| p.language == target) {
        return Err(Error::invalid(format!("no profile for target language {target}")));
    }
    let post = match language_posteriors(&doc.text, profiles) {
        Ok(p) => p,
        Err(Error::InsufficientText { found, .. }) => {
            return Ok(FilterOutcome::rejected(&doc.id, STAGE, "too_short_for_langid")
                .with_score("non_space_chars", found as f64))
        }
        Err(e) => return Err(e),
    };
    let p = post[target];
    let outcome = if p >= threshold {
        FilterOutcome::kept(&doc.id, STAGE)
    } else {
        FilterOutcome::rejected(&doc.id, STAGE, "low_language_probability")
    };
    Ok(outcome.with_score("lang_prob", p))
}

pub fn save_profiles(path: impl AsRef<Path>, profiles: &[LanguageProfile]) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_vec_pretty(profiles)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_profiles(path: impl AsRef<Path>) -> Result<Vec<LanguageProfile>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Read `seeds/<lang>.txt` files; documents are separated by blank lines.
pub fn read_seed_dir(dir: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<String>>> {
    let dir = dir.as_ref();
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_none_or(|e| e != "txt") {
            continue;
        }
        let Some(lang) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let docs: Vec<String> = text
            .split("\n\n")
            .map(str::trim)
            .filter(|d| !d.is_empty())
            .map(String::from)
            .collect();
        out.insert(lang.to_string(), docs);
    }
    Ok(out)
}
