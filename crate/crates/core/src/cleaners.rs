//! Text repair and rule-based quality filters.

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, FilterOutcome};
use crate::error::{Error, Result};

pub const LENGTH_STAGE: &str = "length";
pub const PUNCT_STAGE: &str = "punctuation";
pub const MOJIBAKE_STAGE: &str = "mojibake";
pub const DEFAULT_MIN_CHARS: usize = 200;

fn is_high(c: char) -> bool {
    ('\u{80}'..='\u{ff}').contains(&c)
}

/// Number of adjacent pairs that look like a UTF-8 lead byte followed by a
/// continuation byte after both were decoded as Latin-1.
pub fn mojibake_markers(text: &str) -> usize {
    let mut prev: Option<char> = None;
    let mut count = 0;
    for c in text.chars() {
        if let Some(p) = prev {
            if ('\u{c2}'..='\u{f4}').contains(&p) && ('\u{80}'..='\u{bf}').contains(&c) {
                count += 1;
            }
        }
        prev = Some(c);
    }
    count
}

/// One pass of Latin-1 → UTF-8 reinterpretation over each maximal run of
/// U+0080..U+00FF characters. A run is replaced only when its bytes decode as
/// UTF-8 and the decoded run carries strictly fewer markers.
fn repair_once(text: &str) -> Option<String> {
    let mut out = String::with_capacity(text.len());
    let mut changed = false;
    let mut run = String::new();
    let mut flush = |run: &mut String, out: &mut String| {
        if run.is_empty() {
            return;
        }
        let before = mojibake_markers(run);
        if before > 0 {
            let bytes: Vec<u8> = run.chars().map(|c| c as u32 as u8).collect();
            if let Ok(decoded) = String::from_utf8(bytes) {
                if mojibake_markers(&decoded) < before {
                    out.push_str(&decoded);
                    changed = true;
                    run.clear();
                    return;
                }
            }
        }
        out.push_str(run);
        run.clear();
    };
    for c in text.chars() {
        if is_high(c) {
            run.push(c);
        } else {
            flush(&mut run, &mut out);
            out.push(c);
        }
    }
    flush(&mut run, &mut out);
    changed.then_some(out)
}

/// Undo UTF-8 text that was mis-decoded as Latin-1, repeating until nothing
/// changes. Text without markers is returned unchanged.
pub fn fix_mojibake(text: &str) -> String {
    let mut current = text.to_string();
    while let Some(next) = repair_once(&current) {
        current = next;
    }
    current
}

/// Rewrite the document text; always kept.
pub fn mojibake_stage(doc: &Document) -> (Document, FilterOutcome) {
    let fixed = fix_mojibake(&doc.text);
    let changed = fixed != doc.text;
    let mut out = doc.clone();
    out.text = fixed;
    let outcome = FilterOutcome::kept(&doc.id, MOJIBAKE_STAGE)
        .with_score("repaired", if changed { 1.0 } else { 0.0 });
    (out, outcome)
}

/// Reject documents with fewer than `min_chars` Unicode scalar values.
pub fn length_filter_stage(doc: &Document, min_chars: usize) -> FilterOutcome {
    let chars = doc.text.chars().count();
    let outcome = if chars < min_chars {
        FilterOutcome::rejected(&doc.id, LENGTH_STAGE, "too_short")
    } else {
        FilterOutcome::kept(&doc.id, LENGTH_STAGE)
    };
    outcome.with_score("chars", chars as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PunctuationRules {
    /// Punctuation and symbol characters over non-space characters.
    pub max_punct_ratio: f64,
    /// Alphabetic characters over non-space characters.
    pub min_alpha_ratio: f64,
    /// Longest run of one repeated non-space character.
    pub max_char_run: usize,
    pub min_mean_words_per_sentence: f64,
    /// Only applied to texts with at least three non-empty lines.
    pub min_terminal_punct_line_ratio: f64,
}

impl Default for PunctuationRules {
    fn default() -> Self {
        PunctuationRules {
            max_punct_ratio: 0.30,
            min_alpha_ratio: 0.60,
            max_char_run: 20,
            min_mean_words_per_sentence: 3.0,
            min_terminal_punct_line_ratio: 0.50,
        }
    }
}

impl PunctuationRules {
    pub fn validate(&self) -> Result<()> {
        let ratio = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} outside [0, 1]")))
            }
        };
        ratio("max_punct_ratio", self.max_punct_ratio)?;
        ratio("min_alpha_ratio", self.min_alpha_ratio)?;
        ratio("min_terminal_punct_line_ratio", self.min_terminal_punct_line_ratio)?;
        if self.max_char_run == 0 {
            return Err(Error::invalid("max_char_run must be at least 1"));
        }
        if !(self.min_mean_words_per_sentence >= 0.0) {
            return Err(Error::invalid("min_mean_words_per_sentence must be non-negative"));
        }
        Ok(())
    }
}

/// Measurements the punctuation rules are checked against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextStats {
    pub punct_ratio: f64,
    pub alpha_ratio: f64,
    pub max_char_run: usize,
    pub mean_words_per_sentence: f64,
    /// `None` when the text has fewer than three non-empty lines.
    pub terminal_punct_line_ratio: Option<f64>,
}

const SENTENCE_END: [char; 4] = ['.', '!', '?', '…'];
const CLOSERS: [char; 7] = ['"', '\'', '»', '”', '’', ')', ']'];

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

pub fn text_stats(text: &str) -> TextStats {
    let mut non_space = 0usize;
    let mut punct = 0usize;
    let mut alpha = 0usize;
    let mut longest = 0usize;
    let mut run = 0usize;
    let mut prev: Option<char> = None;
    for c in text.chars() {
        if c.is_whitespace() {
            prev = None;
            run = 0;
            continue;
        }
        non_space += 1;
        if is_punct(c) {
            punct += 1;
        }
        if c.is_alphabetic() {
            alpha += 1;
        }
        run = if prev == Some(c) { run + 1 } else { 1 };
        longest = longest.max(run);
        prev = Some(c);
    }
    let ratio = |n: usize| if non_space == 0 { 0.0 } else { n as f64 / non_space as f64 };

    // Sentences end at [.!?…] followed by whitespace (or end of text).
    let mut sentences = 0usize;
    let mut words = 0usize;
    let mut current_words = 0usize;
    for token in text.split_whitespace() {
        current_words += 1;
        if token.ends_with(SENTENCE_END) {
            sentences += 1;
            words += current_words;
            current_words = 0;
        }
    }
    if current_words > 0 {
        sentences += 1;
        words += current_words;
    }
    let mean_words = if sentences == 0 { 0.0 } else { words as f64 / sentences as f64 };

    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let terminal = (lines.len() >= 3).then(|| {
        let ended = lines
            .iter()
            .filter(|l| l.trim_end_matches(CLOSERS).ends_with(SENTENCE_END))
            .count();
        ended as f64 / lines.len() as f64
    });

    TextStats {
        punct_ratio: ratio(punct),
        alpha_ratio: ratio(alpha),
        max_char_run: longest,
        mean_words_per_sentence: mean_words,
        terminal_punct_line_ratio: terminal,
    }
}

impl TextStats {
    /// Name of the first violated rule, in declaration order.
    pub fn first_violation(&self, rules: &PunctuationRules) -> Option<&'static str> {
        if self.punct_ratio > rules.max_punct_ratio {
            Some("max_punct_ratio")
        } else if self.alpha_ratio < rules.min_alpha_ratio {
            Some("min_alpha_ratio")
        } else if self.max_char_run > rules.max_char_run {
            Some("max_char_run")
        } else if self.mean_words_per_sentence < rules.min_mean_words_per_sentence {
            Some("min_mean_words_per_sentence")
        } else if self
            .terminal_punct_line_ratio
            .is_some_and(|r| r < rules.min_terminal_punct_line_ratio)
        {
            Some("min_terminal_punct_line_ratio")
        } else {
            None
        }
    }
}

pub fn punctuation_filter_stage(doc: &Document, rules: &PunctuationRules) -> FilterOutcome {
    let stats = text_stats(&doc.text);
    let outcome = match stats.first_violation(rules) {
        Some(rule) => FilterOutcome::rejected(&doc.id, PUNCT_STAGE, rule),
        None => FilterOutcome::kept(&doc.id, PUNCT_STAGE),
    };
    let outcome = outcome
        .with_score("punct_ratio", stats.punct_ratio)
        .with_score("alpha_ratio", stats.alpha_ratio)
        .with_score("max_char_run", stats.max_char_run as f64)
        .with_score("mean_words_per_sentence", stats.mean_words_per_sentence);
    match stats.terminal_punct_line_ratio {
        Some(r) => outcome.with_score("terminal_punct_line_ratio", r),
        None => outcome,
    }
}
