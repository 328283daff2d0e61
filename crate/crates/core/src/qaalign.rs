//! Extractive QA feature building with exact answer spans.
//!
//! Each example becomes one or more features laid out as
//! `CLS question SEP context-window SEP`. The answer span is the smallest
//! run of context tokens whose character offsets cover the answer; it is
//! then checked by decoding the tokens back to text. If that check fails a
//! small neighbourhood of spans is tried, and features that still fail are
//! marked unverified and left out of the training output.
//!
//! The module only needs a tokenizer that can encode with offsets, decode ids
//! to bytes and name its CLS and SEP ids; see [`Tokenizer`].

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bpe::{BpeVocab, Encoding};
use crate::error::{Error, Result};

pub const REPAIR_RADIUS: usize = 2;

pub trait Tokenizer: Sync {
    fn encode(&self, text: &str) -> Encoding;
    fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>>;
    fn cls_id(&self) -> Option<u32>;
    fn sep_id(&self) -> Option<u32>;
}

impl Tokenizer for BpeVocab {
    fn encode(&self, text: &str) -> Encoding {
        BpeVocab::encode(self, text)
    }

    fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        BpeVocab::decode_bytes(self, ids)
    }

    fn cls_id(&self) -> Option<u32> {
        BpeVocab::cls_id(self)
    }

    fn sep_id(&self) -> Option<u32> {
        BpeVocab::sep_id(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub question: String,
    pub context: String,
    pub answer_text: String,
    /// Character offset into `context`.
    pub answer_char_start: usize,
}

impl QaExample {
    pub fn answer_char_end(&self) -> usize {
        self.answer_char_start + self.answer_text.chars().count()
    }

    /// Whether the stated offset really points at the answer text.
    pub fn is_consistent(&self) -> bool {
        let got: String = self
            .context
            .chars()
            .skip(self.answer_char_start)
            .take(self.answer_text.chars().count())
            .collect();
        !self.answer_text.is_empty() && got == self.answer_text
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaParams {
    pub max_len: usize,
    pub doc_stride: usize,
    pub max_query_len: usize,
}

impl Default for QaParams {
    fn default() -> Self {
        QaParams { max_len: 384, doc_stride: 128, max_query_len: 64 }
    }
}

impl QaParams {
    /// Context tokens per window: everything left after the query budget
    /// and the three special tokens.
    pub fn window_len(&self) -> Result<usize> {
        if self.doc_stride == 0 || self.doc_stride >= self.max_len {
            return Err(Error::invalid("doc_stride must satisfy 0 < doc_stride < max_len"));
        }
        let w = self
            .max_len
            .checked_sub(self.max_query_len + 3)
            .filter(|&w| w > self.doc_stride)
            .ok_or_else(|| Error::invalid("max_len - max_query_len - 3 must exceed doc_stride"))?;
        Ok(w)
    }
}

/// Start and end (exclusive) context-token indices of each window.
pub fn window_bounds(n_tokens: usize, params: &QaParams) -> Result<Vec<(usize, usize)>> {
    let w = params.window_len()?;
    let step = w - params.doc_stride;
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + w).min(n_tokens);
        out.push((start, end));
        if end >= n_tokens {
            break;
        }
        start += step;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaFeature {
    pub example_id: String,
    pub window_index: usize,
    pub input_ids: Vec<u32>,
    /// Position of the first context token in `input_ids`.
    pub context_start: usize,
    pub context_len: usize,
    /// Character range of the context covered by the window.
    pub window_chars: (usize, usize),
    pub start_token: usize,
    pub end_token: usize,
    pub verified: bool,
}

impl QaFeature {
    /// Both positions at CLS: the answer is not in this window.
    pub fn is_cls_labeled(&self) -> bool {
        self.start_token == 0 && self.end_token == 0
    }

    fn in_context(&self, pos: usize) -> bool {
        pos >= self.context_start && pos < self.context_start + self.context_len
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleFeatures {
    pub features: Vec<QaFeature>,
    pub query_truncated: bool,
    /// Set when no feature of this example carries a verified span.
    pub failure: Option<String>,
}

fn strip_one_space(bytes: &[u8]) -> &[u8] {
    bytes.strip_prefix(b" ").unwrap_or(bytes)
}

fn span_matches<T: Tokenizer + ?Sized>(tok: &T, ids: &[u32], answer: &str) -> bool {
    tok.decode_bytes(ids)
        .map(|b| strip_one_space(&b) == answer.as_bytes())
        .unwrap_or(false)
}

/// Smallest token span covering the character range `[a0, a1)`.
fn covering_span(offsets: &[(usize, usize)], a0: usize, a1: usize) -> Option<(usize, usize)> {
    let s = offsets.iter().rposition(|&(start, _)| start <= a0)?;
    let e = (s..offsets.len()).find(|&i| offsets[i].1 >= a1)?;
    Some((s, e))
}

/// Candidate spans around `(s, e)` ordered by distance, nearest first.
fn repair_candidates(s: usize, e: usize, lo: usize, hi: usize) -> Vec<(usize, usize)> {
    let r = REPAIR_RADIUS as isize;
    let mut out = Vec::new();
    for ds in -r..=r {
        for de in -r..=r {
            let (ns, ne) = (s as isize + ds, e as isize + de);
            if ns < lo as isize || ne >= hi as isize || ns > ne {
                continue;
            }
            out.push((ds.abs() + de.abs(), ds.abs(), ds, de, ns as usize, ne as usize));
        }
    }
    out.sort();
    out.into_iter().map(|c| (c.4, c.5)).collect()
}

pub fn build_qa_features<T: Tokenizer + ?Sized>(ex: &QaExample, tok: &T, params: &QaParams) -> Result<ExampleFeatures> {
    let cls = tok.cls_id().ok_or(Error::MissingClsToken)?;
    let sep = tok.sep_id().ok_or(Error::MissingSepToken)?;
    params.window_len()?;
    if !ex.is_consistent() {
        return Ok(ExampleFeatures {
            features: Vec::new(),
            query_truncated: false,
            failure: Some("answer_mismatch".into()),
        });
    }
    let mut query = tok.encode(&ex.question).ids;
    let query_truncated = query.len() > params.max_query_len;
    query.truncate(params.max_query_len);
    let ctx = tok.encode(&ex.context);
    let (a0, a1) = (ex.answer_char_start, ex.answer_char_end());
    let gold = covering_span(&ctx.offsets, a0, a1);

    let mut features = Vec::new();
    for (wi, (ws, we)) in window_bounds(ctx.len(), params)?.into_iter().enumerate() {
        let mut input_ids = Vec::with_capacity(query.len() + we - ws + 3);
        input_ids.push(cls);
        input_ids.extend(&query);
        input_ids.push(sep);
        let context_start = input_ids.len();
        input_ids.extend(&ctx.ids[ws..we]);
        input_ids.push(sep);
        let window_chars = if we > ws { (ctx.offsets[ws].0, ctx.offsets[we - 1].1) } else { (0, 0) };
        let mut f = QaFeature {
            example_id: ex.id.clone(),
            window_index: wi,
            input_ids,
            context_start,
            context_len: we - ws,
            window_chars,
            start_token: 0,
            end_token: 0,
            verified: true,
        };
        if let Some((s, e)) = gold.filter(|&(s, e)| s >= ws && e < we) {
            let to_pos = |i: usize| context_start + i - ws;
            f.verified = false;
            for (cs, ce) in repair_candidates(s, e, ws, we) {
                if span_matches(tok, &ctx.ids[cs..=ce], &ex.answer_text) {
                    f.start_token = to_pos(cs);
                    f.end_token = to_pos(ce);
                    f.verified = true;
                    break;
                }
            }
            if !f.verified {
                f.start_token = to_pos(s);
                f.end_token = to_pos(e);
            }
        }
        features.push(f);
    }
    let has_span = features.iter().any(|f| f.verified && !f.is_cls_labeled());
    let failure = if has_span {
        None
    } else if gold.is_none() {
        Some("answer_not_covered".into())
    } else {
        Some("no_verified_span".into())
    };
    Ok(ExampleFeatures { features, query_truncated, failure })
}

/// True iff the labelled span decodes to the answer, allowing one leading
/// space. CLS-labelled features make no claim and always pass.
pub fn verify_feature<T: Tokenizer + ?Sized>(f: &QaFeature, tok: &T, ex: &QaExample) -> bool {
    if f.is_cls_labeled() {
        return true;
    }
    if f.start_token > f.end_token || !f.in_context(f.start_token) || !f.in_context(f.end_token) {
        return false;
    }
    span_matches(tok, &f.input_ids[f.start_token..=f.end_token], &ex.answer_text)
}

/// Text of a predicted span, with at most one leading space removed.
pub fn reconstruct_answer<T: Tokenizer + ?Sized>(f: &QaFeature, start: usize, end: usize, tok: &T) -> Result<String> {
    if start > end {
        return Err(Error::invalid(format!("span start {start} after end {end}")));
    }
    if !f.in_context(start) || !f.in_context(end) {
        return Err(Error::invalid(format!("span {start}..={end} leaves the context segment")));
    }
    let bytes = tok.decode_bytes(&f.input_ids[start..=end])?;
    Ok(String::from_utf8_lossy(strip_one_space(&bytes)).into_owned())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaFailure {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaStats {
    pub examples: usize,
    pub features: usize,
    /// Features carrying a verified answer span.
    pub verified: usize,
    /// Features dropped because no span passed verification.
    pub excluded: usize,
    /// Examples with at least one verified span.
    pub covered_examples: usize,
    pub query_truncated: usize,
    pub reasons: BTreeMap<String, usize>,
    pub failures: Vec<QaFailure>,
}

impl QaStats {
    pub fn coverage(&self) -> f64 {
        self.covered_examples as f64 / self.examples.max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct QaOutput {
    /// Training features: verified spans and CLS-labelled windows.
    pub features: Vec<QaFeature>,
    pub stats: QaStats,
}

pub fn process_examples<T: Tokenizer + ?Sized>(examples: &[QaExample], tok: &T, params: &QaParams) -> Result<QaOutput> {
    let built: Vec<ExampleFeatures> = examples
        .par_iter()
        .map(|ex| build_qa_features(ex, tok, params))
        .collect::<Result<_>>()?;
    let mut stats = QaStats { examples: examples.len(), ..Default::default() };
    let mut features = Vec::new();
    for (ex, b) in examples.iter().zip(built) {
        if b.query_truncated {
            stats.query_truncated += 1;
        }
        if let Some(reason) = &b.failure {
            *stats.reasons.entry(reason.clone()).or_default() += 1;
            stats.failures.push(QaFailure { id: ex.id.clone(), reason: reason.clone() });
        } else {
            stats.covered_examples += 1;
        }
        for f in b.features {
            stats.features += 1;
            if !f.verified {
                stats.excluded += 1;
            } else {
                if !f.is_cls_labeled() {
                    stats.verified += 1;
                }
                features.push(f);
            }
        }
    }
    Ok(QaOutput { features, stats })
}

#[derive(Deserialize)]
struct SquadFile {
    data: Vec<SquadArticle>,
}

#[derive(Deserialize)]
struct SquadArticle {
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    answers: Vec<SquadAnswer>,
}

#[derive(Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: usize,
}

/// Flatten SQuAD v1.1-style JSON; the first answer of each question is used.
pub fn parse_squad(json: &str) -> Result<Vec<QaExample>> {
    let file: SquadFile = serde_json::from_str(json)?;
    let mut out = Vec::new();
    for article in file.data {
        for p in article.paragraphs {
            for qa in p.qas {
                let Some(ans) = qa.answers.into_iter().next() else { continue };
                out.push(QaExample {
                    id: qa.id,
                    question: qa.question,
                    context: p.context.clone(),
                    answer_text: ans.text,
                    answer_char_start: ans.answer_start,
                });
            }
        }
    }
    Ok(out)
}

pub fn read_squad(path: impl AsRef<Path>) -> Result<Vec<QaExample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_squad(&text)
}

/// Write SQuAD v1.1-style JSON with one paragraph per example.
pub fn write_squad(examples: &[QaExample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let paragraphs: Vec<serde_json::Value> = examples
        .iter()
        .map(|ex| {
            serde_json::json!({
                "context": ex.context,
                "qas": [{
                    "id": ex.id,
                    "question": ex.question,
                    "answers": [{"text": ex.answer_text, "answer_start": ex.answer_char_start}],
                }],
            })
        })
        .collect();
    let doc = serde_json::json!({"version": "1.1", "data": [{"title": "synthetic", "paragraphs": paragraphs}]});
    fs::write(path, serde_json::to_vec_pretty(&doc)?).map_err(|e| Error::io(path, e))
}

/// Write `features.jsonl` and `stats.json` into `dir`.
pub fn write_output(out: &QaOutput, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("features.jsonl");
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for f in &out.features {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let path = dir.join("stats.json");
    fs::write(&path, serde_json::to_vec_pretty(&out.stats)?).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpe::{train_bpe, BpeConfig};

    fn vocab() -> BpeVocab {
        let corpus = [
            "Colón llegó en 1492 a América. Colón partió de Palos en 1492.",
            "¿Cuándo llegó Colón a América? ¿De dónde partió?",
            "el año 1492 fue importante para la historia de España y de América",
        ];
        train_bpe(&corpus, &BpeConfig { vocab_size: 380, ..Default::default() }).unwrap()
    }

    fn example(context: &str, answer: &str) -> QaExample {
        let byte = context.find(answer).unwrap();
        QaExample {
            id: "q1".into(),
            question: "¿Cuándo?".into(),
            context: context.into(),
            answer_text: answer.into(),
            answer_char_start: context[..byte].chars().count(),
        }
    }

    /// Every span in the context segment whose decode matches the answer.
    fn oracle_spans(f: &QaFeature, tok: &BpeVocab, answer: &str) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for s in f.context_start..f.context_start + f.context_len {
            for e in s..f.context_start + f.context_len {
                let bytes = tok.decode_bytes(&f.input_ids[s..=e]).unwrap();
                if bytes == answer.as_bytes() || bytes.strip_prefix(b" ") == Some(answer.as_bytes()) {
                    out.push((s, e));
                }
            }
        }
        out
    }

    #[test]
    fn year_after_space() {
        let v = vocab();
        let ex = example("Colón llegó en 1492 a América.", "1492");
        let b = build_qa_features(&ex, &v, &QaParams::default()).unwrap();
        assert_eq!(b.features.len(), 1);
        let f = &b.features[0];
        assert!(f.verified && !f.is_cls_labeled());
        assert!(oracle_spans(f, &v, "1492").contains(&(f.start_token, f.end_token)));
        assert_eq!(reconstruct_answer(f, f.start_token, f.end_token, &v).unwrap(), "1492");
        let raw = v.decode(&f.input_ids[f.start_token..=f.end_token]).unwrap();
        assert!(raw == " 1492" || raw == "1492");
        assert!(verify_feature(f, &v, &ex));

        let mut shifted = f.clone();
        shifted.end_token += 1;
        assert!(!verify_feature(&shifted, &v, &ex));
    }

    #[test]
    fn whole_context_answer() {
        let v = vocab();
        let ex = example("Palos en 1492", "Palos en 1492");
        let f = &build_qa_features(&ex, &v, &QaParams::default()).unwrap().features[0];
        assert!(f.verified);
        assert_eq!(f.start_token, f.context_start);
        assert_eq!(f.end_token, f.context_start + f.context_len - 1);
    }

    #[test]
    fn answer_in_second_window_only() {
        let v = vocab();
        let params = QaParams { max_len: 40, doc_stride: 10, max_query_len: 8 };
        // window 29 tokens, step 19: windows start at 0 and 19
        assert_eq!(params.window_len().unwrap(), 29);
        let filler: Vec<String> = (0..40).map(|_| "a".to_string()).collect();
        let context = format!("{} Colón", filler.join(" "));
        let ex = example(&context, "Colón");
        let ctx = v.encode(&context);
        let bounds = window_bounds(ctx.len(), &params).unwrap();
        assert_eq!(bounds[0], (0, 29));
        assert_eq!(bounds[1].0, 19);
        let b = build_qa_features(&ex, &v, &params).unwrap();
        assert!(b.features[0].is_cls_labeled());
        let last = b.features.last().unwrap();
        assert!(last.verified && !last.is_cls_labeled());
        assert_eq!(reconstruct_answer(last, last.start_token, last.end_token, &v).unwrap(), "Colón");
    }

    #[test]
    fn windows_cover_and_overlap() {
        let params = QaParams { max_len: 40, doc_stride: 10, max_query_len: 8 };
        for n in [0, 1, 29, 30, 48, 49, 100, 257] {
            let b = window_bounds(n, &params).unwrap();
            assert_eq!(b[0].0, 0);
            assert_eq!(b.last().unwrap().1, n);
            for w in b.windows(2) {
                assert!(w[1].0 < w[0].1);
                if w[1].1 - w[1].0 == 29 {
                    assert_eq!(w[0].1 - w[1].0, 10);
                }
            }
        }
    }

    #[test]
    fn bad_params() {
        let v = vocab();
        let ex = example("Colón llegó", "Colón");
        for p in [
            QaParams { doc_stride: 0, ..Default::default() },
            QaParams { doc_stride: 384, ..Default::default() },
            QaParams { max_len: 100, doc_stride: 50, max_query_len: 64 },
        ] {
            assert!(build_qa_features(&ex, &v, &p).is_err());
        }
    }

    #[test]
    fn missing_cls_is_an_error() {
        let corpus = ["hola mundo"];
        let cfg = BpeConfig { vocab_size: 270, specials: vec!["[SEP]".into(), "[PAD]".into()] };
        let v = train_bpe(&corpus, &cfg).unwrap();
        let ex = example("hola mundo", "mundo");
        assert!(matches!(build_qa_features(&ex, &v, &QaParams::default()), Err(Error::MissingClsToken)));
    }

    #[test]
    fn long_query_truncated_not_fatal() {
        let v = vocab();
        let mut ex = example("Colón llegó en 1492 a América.", "América");
        ex.question = "¿Cuándo llegó Colón? ".repeat(30);
        let b = build_qa_features(&ex, &v, &QaParams::default()).unwrap();
        assert!(b.query_truncated);
        assert_eq!(b.features[0].context_start, 1 + 64 + 1);
    }

    #[test]
    fn reconstruct_rejects_bad_spans() {
        let v = vocab();
        let ex = example("Colón llegó en 1492 a América.", "1492");
        let f = &build_qa_features(&ex, &v, &QaParams::default()).unwrap().features[0];
        assert!(reconstruct_answer(f, f.end_token, f.start_token.saturating_sub(1), &v).is_err());
        assert!(reconstruct_answer(f, 0, f.end_token, &v).is_err());
        let single = reconstruct_answer(f, f.context_start, f.context_start, &v).unwrap();
        let direct = v.decode(&f.input_ids[f.context_start..=f.context_start]).unwrap();
        assert_eq!(single, direct.strip_prefix(' ').unwrap_or(&direct));
    }

    #[test]
    fn inconsistent_offset_reported() {
        let v = vocab();
        let mut ex = example("Colón llegó en 1492 a América.", "1492");
        ex.answer_char_start += 1;
        let out = process_examples(&[ex], &v, &QaParams::default()).unwrap();
        assert_eq!(out.stats.reasons.get("answer_mismatch"), Some(&1));
        assert_eq!(out.stats.failures[0].id, "q1");
    }

    #[test]
    fn squad_round_trip() {
        let exs = vec![example("Colón llegó en 1492 a América.", "1492"), example("¿De dónde partió?", "dónde")];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("squad.json");
        write_squad(&exs, &p).unwrap();
        assert_eq!(read_squad(&p).unwrap(), exs);
        let out = process_examples(&exs, &vocab(), &QaParams::default()).unwrap();
        write_output(&out, dir.path().join("out")).unwrap();
        let stats: QaStats = serde_json::from_slice(&fs::read(dir.path().join("out/stats.json")).unwrap()).unwrap();
        assert_eq!(stats.examples, 2);
        assert_eq!(stats.covered_examples, 2);
    }
}
