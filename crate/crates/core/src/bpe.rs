//! Byte-level BPE: trainer, offset-tracking encoder and decoder.
//!
//! Bytes are mapped to printable surrogate characters with the usual GPT-2
//! table, so every token is a plain string and the vocabulary can be stored
//! as JSON. Pre-tokens are maximal non-whitespace runs, each carrying at most
//! one preceding U+0020 space; any other whitespace forms its own pre-token.
//! Merges never cross pre-token boundaries.
//!
//! Ids: special tokens first (in the order given), then the 256 byte units in
//! byte order, then learned merges.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const MASK: &str = "[MASK]";
pub const DEFAULT_SPECIALS: [&str; 5] = [CLS, SEP, PAD, UNK, MASK];
pub const DEFAULT_VOCAB_SIZE: usize = 50_265;
pub const MERGES_FILE: &str = "merges.txt";
pub const VOCAB_FILE: &str = "vocab.json";
const MERGES_HEADER: &str = "#version: 1";

struct ByteMap {
    forward: [char; 256],
    inverse: HashMap<char, u8>,
}

fn byte_map() -> &'static ByteMap {
    static MAP: OnceLock<ByteMap> = OnceLock::new();
    MAP.get_or_init(|| {
        let printable = |b: u8| matches!(b, b'!'..=b'~' | 0xA1..=0xAC | 0xAE..=0xFF);
        let mut forward = ['\0'; 256];
        let mut next = 256u32;
        for b in 0..=255u8 {
            forward[b as usize] = if printable(b) {
                char::from(b)
            } else {
                let c = char::from_u32(next).expect("valid code point");
                next += 1;
                c
            };
        }
        let inverse = forward.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        ByteMap { forward, inverse }
    })
}

/// Surrogate character for one byte.
pub fn byte_to_char(b: u8) -> char {
    byte_map().forward[b as usize]
}

pub fn char_to_byte(c: char) -> Option<u8> {
    byte_map().inverse.get(&c).copied()
}

/// The byte map as `byte<TAB>code point<TAB>char` lines.
pub fn byte_map_table() -> String {
    let mut out = String::from("byte\tcodepoint\tchar\n");
    for b in 0..=255u8 {
        let c = byte_to_char(b);
        out.push_str(&format!("{b}\tU+{:04X}\t{c}\n", c as u32));
    }
    out
}

/// Byte ranges of pre-tokens.
pub fn pre_tokenize(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(start, c)) = chars.peek() {
        if c.is_whitespace() {
            let mut end = start;
            let mut last = start;
            while let Some(&(i, c)) = chars.peek() {
                if !c.is_whitespace() {
                    break;
                }
                last = i;
                end = i + c.len_utf8();
                chars.next();
            }
            let attach = end < text.len() && text.as_bytes()[last] == b' ';
            let split = if attach { last } else { end };
            if split > start {
                out.push((start, split));
            }
            if attach {
                let word_end = run_end(text, end);
                out.push((last, word_end));
                while chars.peek().is_some_and(|&(i, _)| i < word_end) {
                    chars.next();
                }
            }
        } else {
            let word_end = run_end(text, start);
            out.push((start, word_end));
            while chars.peek().is_some_and(|&(i, _)| i < word_end) {
                chars.next();
            }
        }
    }
    out
}

fn run_end(text: &str, from: usize) -> usize {
    text[from..]
        .char_indices()
        .find(|(_, c)| c.is_whitespace())
        .map_or(text.len(), |(i, _)| from + i)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeVocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    ranks: HashMap<(u32, u32), (usize, u32)>,
    num_specials: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub tokens: Vec<String>,
    /// Character offsets into the encoded text, end exclusive.
    pub offsets: Vec<(usize, usize)>,
    pub special_mask: Vec<bool>,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpeConfig {
    pub vocab_size: usize,
    pub specials: Vec<String>,
}

impl Default for BpeConfig {
    fn default() -> Self {
        BpeConfig {
            vocab_size: DEFAULT_VOCAB_SIZE,
            specials: DEFAULT_SPECIALS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl BpeVocab {
    fn base(specials: &[String]) -> Result<Self> {
        let mut vocab = BpeVocab {
            tokens: Vec::new(),
            ids: HashMap::new(),
            merges: Vec::new(),
            ranks: HashMap::new(),
            num_specials: specials.len(),
        };
        for s in specials {
            if s.chars().count() < 2 || s.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("special token {s:?} must be at least two non-space characters")));
            }
            if vocab.push(s.clone()).is_none() {
                return Err(Error::invalid(format!("duplicate special token {s:?}")));
            }
        }
        for b in 0..=255u8 {
            vocab.push(byte_to_char(b).to_string());
        }
        Ok(vocab)
    }

    fn push(&mut self, token: String) -> Option<u32> {
        if self.ids.contains_key(&token) {
            return None;
        }
        let id = self.tokens.len() as u32;
        self.ids.insert(token.clone(), id);
        self.tokens.push(token);
        Some(id)
    }

    fn add_merge(&mut self, left: &str, right: &str) -> u32 {
        let merged = format!("{left}{right}");
        let id = match self.ids.get(&merged) {
            Some(&id) => id,
            None => self.push(merged).expect("fresh token"),
        };
        let key = (self.ids[left], self.ids[right]);
        self.ranks.entry(key).or_insert((self.merges.len(), id));
        self.merges.push((left.to_string(), right.to_string()));
        id
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token_to_id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn id_to_token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < self.num_specials
    }

    pub fn specials(&self) -> &[String] {
        &self.tokens[..self.num_specials]
    }

    pub fn special_id(&self, token: &str) -> Option<u32> {
        self.token_to_id(token).filter(|&id| self.is_special(id))
    }

    pub fn cls_id(&self) -> Option<u32> {
        self.special_id(CLS)
    }

    pub fn sep_id(&self) -> Option<u32> {
        self.special_id(SEP)
    }

    fn byte_id(&self, b: u8) -> u32 {
        (self.num_specials + b as usize) as u32
    }

    /// Apply merges by rank to one pre-token; units carry byte ranges.
    fn encode_piece(&self, bytes: &[u8], base: usize, out: &mut Vec<(u32, usize, usize)>) {
        let mut units: Vec<(u32, usize, usize)> =
            bytes.iter().enumerate().map(|(i, &b)| (self.byte_id(b), base + i, base + i + 1)).collect();
        loop {
            let best = units
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].0, w[1].0)).map(|&(rank, id)| (rank, w[0].0, w[1].0, id)))
                .min();
            let Some((_, l, r, id)) = best else { break };
            let mut merged = Vec::with_capacity(units.len());
            let mut i = 0;
            while i < units.len() {
                if i + 1 < units.len() && units[i].0 == l && units[i + 1].0 == r {
                    merged.push((id, units[i].1, units[i + 1].2));
                    i += 2;
                } else {
                    merged.push(units[i]);
                    i += 1;
                }
            }
            units = merged;
        }
        out.extend(units);
    }

    /// Tokenize `text`. Offsets are character positions derived from the
    /// byte range each token covers: a byte position maps to the number of
    /// character starts before it, so a token that ends inside a multi-byte
    /// character claims that character and the following fragment gets an
    /// empty range.
    pub fn encode(&self, text: &str) -> Encoding {
        let mut units = Vec::new();
        for (s, e) in pre_tokenize(text) {
            self.encode_piece(&text.as_bytes()[s..e], s, &mut units);
        }
        let mut char_at = vec![0usize; text.len() + 1];
        let mut n = 0;
        for b in 0..=text.len() {
            char_at[b] = n;
            if b < text.len() && text.is_char_boundary(b) {
                n += 1;
            }
        }
        let mut enc = Encoding {
            ids: Vec::with_capacity(units.len()),
            tokens: Vec::with_capacity(units.len()),
            offsets: Vec::with_capacity(units.len()),
            special_mask: Vec::with_capacity(units.len()),
        };
        for (id, s, e) in units {
            enc.ids.push(id);
            enc.tokens.push(self.tokens[id as usize].clone());
            enc.offsets.push((char_at[s], char_at[e]));
            enc.special_mask.push(false);
        }
        enc
    }

    /// Exact bytes of the given tokens; specials contribute their literal text.
    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let token = self.id_to_token(id).ok_or(Error::IdOutOfRange { id, vocab_size: self.vocab_size() })?;
            if self.is_special(id) {
                out.extend_from_slice(token.as_bytes());
            } else {
                out.extend(token.chars().map(|c| char_to_byte(c).expect("non-special tokens are byte surrogates")));
            }
        }
        Ok(out)
    }

    /// Lossy on id slices that split a multi-byte character.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }

    /// Check that ids are dense, byte units sit right after the specials and
    /// that every learned token is produced by its merge.
    pub fn validate(&self) -> Result<()> {
        for b in 0..=255u8 {
            if self.token_to_id(&byte_to_char(b).to_string()) != Some(self.byte_id(b)) {
                return Err(Error::invalid(format!("byte unit {b} has the wrong id")));
            }
        }
        let mut produced: HashSet<&str> = HashSet::new();
        for (l, r) in &self.merges {
            let known = |t: &str| self.ids.get(t).is_some_and(|&id| !self.is_special(id));
            if !known(l) || !known(r) {
                return Err(Error::invalid(format!("merge {l} {r} uses an unknown unit")));
            }
            let merged = format!("{l}{r}");
            if !self.ids.contains_key(&merged) {
                return Err(Error::invalid(format!("merge result {merged} missing from vocabulary")));
            }
            produced.insert(self.tokens[self.ids[&merged] as usize].as_str());
        }
        for (id, t) in self.tokens.iter().enumerate().skip(self.num_specials + 256) {
            if !produced.contains(t.as_str()) {
                return Err(Error::invalid(format!("token {id} {t:?} is not produced by any merge")));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(MERGES_FILE);
        let mut merges = Vec::new();
        writeln!(merges, "{MERGES_HEADER}").expect("in-memory write");
        for (l, r) in &self.merges {
            writeln!(merges, "{l} {r}").expect("in-memory write");
        }
        fs::write(&path, merges).map_err(|e| Error::io(&path, e))?;
        let path = dir.join(VOCAB_FILE);
        let map: std::collections::BTreeMap<&str, u32> =
            self.tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i as u32)).collect();
        fs::write(&path, serde_json::to_vec_pretty(&map)?).map_err(|e| Error::io(&path, e))
    }

    /// Load and validate; specials are the tokens whose ids precede byte 0.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(VOCAB_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let map: HashMap<String, u32> = serde_json::from_slice(&bytes)?;
        let mut tokens = vec![None; map.len()];
        for (t, id) in map {
            let slot = tokens
                .get_mut(id as usize)
                .ok_or_else(|| Error::invalid(format!("id {id} not dense in {}", path.display())))?;
            *slot = Some(t);
        }
        let tokens: Vec<String> = tokens
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| Error::invalid(format!("ids not dense in {}", path.display())))?;
        let num_specials = tokens
            .iter()
            .position(|t| *t == byte_to_char(0).to_string())
            .ok_or_else(|| Error::invalid("vocabulary lacks byte units"))?;
        let mut vocab = BpeVocab::base(&tokens[..num_specials])?;

        let path = dir.join(MERGES_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        for (i, line) in text.lines().enumerate() {
            if line.starts_with("#version") || line.is_empty() {
                continue;
            }
            let (l, r) = line.split_once(' ').ok_or_else(|| Error::Malformed {
                path: path.clone(),
                line: i as u64 + 1,
                message: "expected two units".into(),
            })?;
            if !vocab.ids.contains_key(l) || !vocab.ids.contains_key(r) {
                return Err(Error::Malformed { path: path.clone(), line: i as u64 + 1, message: "unknown unit".into() });
            }
            vocab.add_merge(l, r);
        }
        if vocab.tokens != tokens {
            return Err(Error::invalid("merges do not reproduce the vocabulary ids"));
        }
        vocab.validate()?;
        Ok(vocab)
    }
}

fn count_pre_tokens<S: AsRef<str> + Sync>(texts: &[S]) -> HashMap<Vec<u8>, u64> {
    texts
        .par_iter()
        .fold(HashMap::new, |mut acc: HashMap<Vec<u8>, u64>, t| {
            let t = t.as_ref();
            for (s, e) in pre_tokenize(t) {
                *acc.entry(t.as_bytes()[s..e].to_vec()).or_default() += 1;
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        })
}

type HeapEntry = (i64, Reverse<(String, String)>, u32, u32);

/// Greedy BPE training.
///
/// Each round merges the most frequent adjacent pair (ties: smallest
/// `(left, right)` by surrogate string). Pairs whose concatenation equals a
/// special token are never merged. Training stops once the vocabulary holds
/// `vocab_size` tokens or no pair is left.
pub fn train_bpe<S: AsRef<str> + Sync>(texts: &[S], config: &BpeConfig) -> Result<BpeVocab> {
    let mut vocab = BpeVocab::base(&config.specials)?;
    if config.vocab_size <= vocab.vocab_size() {
        return Err(Error::invalid(format!(
            "vocab_size {} must exceed {} (256 bytes + specials)",
            config.vocab_size,
            vocab.vocab_size()
        )));
    }
    let counts = count_pre_tokens(texts);
    if counts.is_empty() {
        return Err(Error::EmptyCorpus("tokenizer".into()));
    }
    let mut words: Vec<(Vec<u32>, i64)> = counts
        .into_iter()
        .map(|(bytes, c)| (bytes.iter().map(|&b| vocab.byte_id(b)).collect(), c as i64))
        .collect();
    words.sort();

    let mut pair_counts: HashMap<(u32, u32), i64> = HashMap::new();
    let mut where_: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (w, (units, c)) in words.iter().enumerate() {
        for p in units.windows(2) {
            *pair_counts.entry((p[0], p[1])).or_default() += c;
            where_.entry((p[0], p[1])).or_default().insert(w);
        }
    }
    let entry = |vocab: &BpeVocab, pair: (u32, u32), c: i64| -> HeapEntry {
        let l = vocab.tokens[pair.0 as usize].clone();
        let r = vocab.tokens[pair.1 as usize].clone();
        (c, Reverse((l, r)), pair.0, pair.1)
    };
    let mut heap: BinaryHeap<HeapEntry> = pair_counts.iter().map(|(&p, &c)| entry(&vocab, p, c)).collect();
    let specials: HashSet<String> = config.specials.iter().cloned().collect();
    let mut forbidden: HashSet<(u32, u32)> = HashSet::new();

    while vocab.vocab_size() < config.vocab_size {
        let Some((c, Reverse((l, r)), a, b)) = heap.pop() else { break };
        if pair_counts.get(&(a, b)).copied() != Some(c) || c <= 0 || forbidden.contains(&(a, b)) {
            continue;
        }
        if specials.contains(&format!("{l}{r}")) {
            forbidden.insert((a, b));
            continue;
        }
        let new_id = vocab.add_merge(&l, &r);
        let mut touched: Vec<usize> = where_.remove(&(a, b)).unwrap_or_default().into_iter().collect();
        touched.sort_unstable();
        let mut changed: HashSet<(u32, u32)> = HashSet::new();
        for w in touched {
            let (units, wc) = &words[w];
            let wc = *wc;
            if !units.windows(2).any(|p| p[0] == a && p[1] == b) {
                continue;
            }
            let mut merged = Vec::with_capacity(units.len());
            let mut i = 0;
            while i < units.len() {
                if i + 1 < units.len() && units[i] == a && units[i + 1] == b {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(units[i]);
                    i += 1;
                }
            }
            for p in units.windows(2) {
                *pair_counts.get_mut(&(p[0], p[1])).expect("counted pair") -= wc;
                changed.insert((p[0], p[1]));
            }
            for p in merged.windows(2) {
                *pair_counts.entry((p[0], p[1])).or_default() += wc;
                where_.entry((p[0], p[1])).or_default().insert(w);
                changed.insert((p[0], p[1]));
            }
            words[w].0 = merged;
        }
        pair_counts.remove(&(a, b));
        for p in changed {
            match pair_counts.get(&p) {
                Some(&c) if c > 0 => heap.push(entry(&vocab, p, c)),
                Some(_) => {
                    pair_counts.remove(&p);
                }
                None => {}
            }
        }
    }
    Ok(vocab)
}
