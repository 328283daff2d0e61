//! Synthetic corpora for integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rigopipe_core::Document;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn seeds_dir() -> PathBuf {
    repo_root().join("seeds")
}

/// Distinct lowercase words of a seed file.
pub fn lexicon(lang: &str) -> Vec<String> {
    let text = std::fs::read_to_string(seeds_dir().join(format!("{lang}.txt"))).unwrap();
    let words: BTreeSet<String> = text
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphabetic()).to_lowercase())
        .filter(|w| w.chars().count() >= 2 && w.chars().all(char::is_alphabetic))
        .collect();
    words.into_iter().collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

pub fn sentence(rng: &mut impl Rng, lex: &[String], min_words: usize, max_words: usize) -> String {
    let n = rng.gen_range(min_words..=max_words);
    let words: Vec<&str> = (0..n).map(|_| lex.choose(rng).unwrap().as_str()).collect();
    format!("{}{}.", capitalize(words[0]), words[1..].iter().map(|w| format!(" {w}")).collect::<String>())
}

/// Sentences until the text reaches `min_chars` characters.
pub fn paragraph(rng: &mut impl Rng, lex: &[String], min_chars: usize) -> String {
    let mut out = String::new();
    while out.chars().count() < min_chars {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&sentence(rng, lex, 6, 14));
    }
    out
}

/// One sentence-based text whose length lies in `[lo, hi)` characters.
pub fn short_text(rng: &mut impl Rng, lex: &[String], lo: usize, hi: usize) -> String {
    loop {
        let mut out = String::new();
        while out.chars().count() < lo {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&sentence(rng, lex, 4, 9));
        }
        if out.chars().count() < hi {
            return out;
        }
    }
}

pub struct Planted {
    pub docs: Vec<Document>,
    /// Spanish documents shorter than 200 characters.
    pub short: usize,
    /// Long documents in English, French or Portuguese.
    pub foreign: usize,
    /// Verbatim copies of other Spanish news documents.
    pub duplicates: usize,
    /// Long Spanish documents tagged with the mc4 source.
    pub mc4: usize,
}

/// Shuffled corpus of `n` documents with known numbers of short, foreign
/// and duplicated documents. Duplicates only copy `news` documents, so
/// sampling restricted to `mc4` never touches them.
pub fn planted_corpus(n: usize, seed: u64) -> Planted {
    let mut r = rng(seed);
    let es = lexicon("es");
    let others: Vec<Vec<String>> = ["en", "fr", "pt"].iter().map(|l| lexicon(l)).collect();
    let foreign = n / 10;
    let short = n * 8 / 100;
    let duplicates = n / 20;
    let mc4 = n / 5;
    let news = n - foreign - short - duplicates - mc4;
    assert!(news >= duplicates);

    let mut texts: Vec<(String, &str)> = Vec::with_capacity(n);
    let mut news_texts = Vec::with_capacity(news);
    for _ in 0..news {
        let len = r.gen_range(250..900);
        let t = paragraph(&mut r, &es, len);
        news_texts.push(t.clone());
        texts.push((t, "news"));
    }
    for i in 0..duplicates {
        texts.push((news_texts[i].clone(), "news"));
    }
    for _ in 0..mc4 {
        let len = r.gen_range(250..900);
        texts.push((paragraph(&mut r, &es, len), "mc4"));
    }
    for _ in 0..short {
        texts.push((short_text(&mut r, &es, 60, 195), "news"));
    }
    for i in 0..foreign {
        let lex = &others[i % others.len()];
        let len = r.gen_range(250..600);
        texts.push((paragraph(&mut r, lex, len), "web"));
    }
    texts.shuffle(&mut r);
    let docs = texts
        .into_iter()
        .enumerate()
        .map(|(i, (t, s))| Document::new(format!("doc-{i:05}"), t, s))
        .collect();
    Planted { docs, short, foreign, duplicates, mc4 }
}

/// Spanish training text for the word LM.
pub fn lm_training_docs(n: usize, seed: u64) -> Vec<Document> {
    let mut r = rng(seed);
    let es = lexicon("es");
    (0..n)
        .map(|i| Document::new(format!("lm-{i}"), paragraph(&mut r, &es, 400), "train"))
        .collect()
}

/// Replace `edits` distinct word positions with fresh tokens.
pub fn perturb_words(rng: &mut impl Rng, words: &[String], edits: usize) -> Vec<String> {
    let mut out = words.to_vec();
    let mut positions: Vec<usize> = (0..words.len()).collect();
    positions.shuffle(rng);
    for &p in positions.iter().take(edits) {
        out[p] = format!("edit{}x{}", p, rng.gen::<u32>());
    }
    out
}
