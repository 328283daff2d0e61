//! MinHash signatures, banded LSH and near-duplicate clustering.
//!
//! Documents are lowercased and split on whitespace; each window of
//! `shingle_width` words (joined by single spaces) is hashed with XXH64 and
//! reduced modulo the Mersenne prime `p = 2^61 - 1`. Permutation `i` is the
//! affine map `x -> (a_i x + b_i) mod p` with `(a_i, b_i)` drawn from a
//! ChaCha8 stream seeded by the signature seed. Band `j` of a signature is
//! bucketed by the XXH64 (seed `j`) of its `rows` minima in little-endian
//! byte order.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, FilterOutcome};
use crate::error::{Error, Result};
use crate::hashing::{hash_bytes, hash_str};
use crate::unionfind::UnionFind;

pub const MERSENNE_61: u64 = (1 << 61) - 1;
pub const STAGE: &str = "dedup";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashSignature {
    pub minima: Vec<u64>,
    pub k: usize,
    pub shingle_width: usize,
    pub seed: u64,
}

impl MinHashSignature {
    fn check_compatible(&self, other: &MinHashSignature) -> Result<()> {
        if self.k != other.k || self.shingle_width != other.shingle_width || self.seed != other.seed {
            return Err(Error::IncompatibleSignatures(format!(
                "(k={}, w={}, seed={}) vs (k={}, w={}, seed={})",
                self.k, self.shingle_width, self.seed, other.k, other.shingle_width, other.seed
            )));
        }
        Ok(())
    }
}

/// Lowercased whitespace tokens joined into `w`-word windows.
///
/// Texts shorter than `w` words form a single shingle.
pub fn shingles(text: &str, w: usize) -> Vec<String> {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower.split_whitespace().collect();
    if words.len() < w {
        return vec![words.join(" ")];
    }
    words.windows(w).map(|win| win.join(" ")).collect()
}

/// Base 64-bit hash of a shingle.
pub fn shingle_hash(shingle: &str) -> u64 {
    hash_str(shingle, 0)
}

/// Signature generator with fixed permutation parameters.
#[derive(Debug, Clone)]
pub struct MinHasher {
    k: usize,
    shingle_width: usize,
    seed: u64,
    coeffs: Vec<(u64, u64)>,
}

impl MinHasher {
    pub fn new(k: usize, shingle_width: usize, seed: u64) -> Result<Self> {
        if k < 16 {
            return Err(Error::invalid(format!("k = {k} below minimum of 16 permutations")));
        }
        if shingle_width == 0 {
            return Err(Error::invalid("shingle width must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = (0..k)
            .map(|_| (rng.gen_range(1..MERSENNE_61), rng.gen_range(0..MERSENNE_61)))
            .collect();
        Ok(MinHasher {
            k,
            shingle_width,
            seed,
            coeffs,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn signature(&self, text: &str) -> MinHashSignature {
        self.signature_from_hashes(shingles(text, self.shingle_width).iter().map(|s| shingle_hash(s)))
    }

    /// Signature of an arbitrary set of 64-bit element hashes.
    pub fn signature_from_hashes(&self, hashes: impl IntoIterator<Item = u64>) -> MinHashSignature {
        let mut minima = vec![u64::MAX; self.k];
        for h in hashes {
            let x = (h % MERSENNE_61) as u128;
            for (m, &(a, b)) in minima.iter_mut().zip(&self.coeffs) {
                let v = ((a as u128 * x + b as u128) % MERSENNE_61 as u128) as u64;
                if v < *m {
                    *m = v;
                }
            }
        }
        MinHashSignature {
            minima,
            k: self.k,
            shingle_width: self.shingle_width,
            seed: self.seed,
        }
    }
}

pub fn compute_signature(text: &str, k: usize, shingle_width: usize, seed: u64) -> Result<MinHashSignature> {
    Ok(MinHasher::new(k, shingle_width, seed)?.signature(text))
}

/// Fraction of positions where the minima agree.
pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> Result<f64> {
    a.check_compatible(b)?;
    if a.minima.len() != b.minima.len() {
        return Err(Error::IncompatibleSignatures("minima lengths differ".into()));
    }
    let agree = a.minima.iter().zip(&b.minima).filter(|(x, y)| x == y).count();
    Ok(agree as f64 / a.k as f64)
}

/// Exact Jaccard similarity of two texts' shingle sets.
pub fn exact_jaccard(a: &str, b: &str, shingle_width: usize) -> f64 {
    let sa: HashSet<String> = shingles(a, shingle_width).into_iter().collect();
    let sb: HashSet<String> = shingles(b, shingle_width).into_iter().collect();
    let inter = sa.intersection(&sb).count();
    let union = sa.len() + sb.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Probability that a pair with Jaccard `s` shares at least one band.
pub fn candidate_probability(s: f64, bands: usize, rows: usize) -> f64 {
    1.0 - (1.0 - s.powi(rows as i32)).powi(bands as i32)
}

fn band_hash(minima: &[u64], band: usize) -> u64 {
    let mut bytes = Vec::with_capacity(minima.len() * 8);
    for m in minima {
        bytes.extend_from_slice(&m.to_le_bytes());
    }
    hash_bytes(&bytes, band as u64)
}

/// Banded LSH index over MinHash signatures.
#[derive(Debug, Clone)]
pub struct LshIndex {
    bands: usize,
    rows: usize,
    ids: Vec<String>,
    positions: HashMap<String, usize>,
    signatures: Vec<MinHashSignature>,
    buckets: Vec<HashMap<u64, Vec<usize>>>,
}

impl LshIndex {
    pub fn new(bands: usize, rows: usize) -> Result<Self> {
        if bands == 0 || rows == 0 {
            return Err(Error::invalid("bands and rows must be positive"));
        }
        Ok(LshIndex {
            bands,
            rows,
            ids: Vec::new(),
            positions: HashMap::new(),
            signatures: Vec::new(),
            buckets: vec![HashMap::new(); bands],
        })
    }

    fn check(&self, sig: &MinHashSignature) -> Result<()> {
        if self.bands * self.rows != sig.k || sig.minima.len() != sig.k {
            return Err(Error::invalid(format!(
                "bands * rows = {} does not match signature length {}",
                self.bands * self.rows,
                sig.k
            )));
        }
        if let Some(first) = self.signatures.first() {
            first.check_compatible(sig)?;
        }
        Ok(())
    }

    pub fn insert(&mut self, id: impl Into<String>, sig: MinHashSignature) -> Result<()> {
        let id = id.into();
        self.check(&sig)?;
        if self.positions.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        let pos = self.ids.len();
        for (band, chunk) in sig.minima.chunks(self.rows).enumerate() {
            self.buckets[band].entry(band_hash(chunk, band)).or_default().push(pos);
        }
        self.positions.insert(id.clone(), pos);
        self.ids.push(id);
        self.signatures.push(sig);
        Ok(())
    }

    /// Bulk construction; bands are filled in parallel, one writer per band.
    pub fn from_signatures(entries: Vec<(String, MinHashSignature)>, bands: usize, rows: usize) -> Result<Self> {
        let mut index = LshIndex::new(bands, rows)?;
        for (id, sig) in entries {
            index.check(&sig)?;
            if index.positions.contains_key(&id) {
                return Err(Error::DuplicateId(id));
            }
            index.positions.insert(id.clone(), index.ids.len());
            index.ids.push(id);
            index.signatures.push(sig);
        }
        let sigs = &index.signatures;
        index.buckets = (0..bands)
            .into_par_iter()
            .map(|band| {
                let mut map: HashMap<u64, Vec<usize>> = HashMap::new();
                for (pos, sig) in sigs.iter().enumerate() {
                    let chunk = &sig.minima[band * rows..(band + 1) * rows];
                    map.entry(band_hash(chunk, band)).or_default().push(pos);
                }
                map
            })
            .collect();
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, pos: usize) -> &str {
        &self.ids[pos]
    }

    pub fn signature(&self, pos: usize) -> &MinHashSignature {
        &self.signatures[pos]
    }

    /// Number of buckets holding `id`; equals the band count for indexed ids.
    pub fn bucket_memberships(&self, id: &str) -> usize {
        let Some(&pos) = self.positions.get(id) else {
            return 0;
        };
        self.buckets
            .iter()
            .map(|b| b.values().filter(|v| v.contains(&pos)).count())
            .sum()
    }

    /// Number of bands in which the two ids share a bucket.
    pub fn shared_bands(&self, a: &str, b: &str) -> usize {
        let (Some(&pa), Some(&pb)) = (self.positions.get(a), self.positions.get(b)) else {
            return 0;
        };
        let (sa, sb) = (&self.signatures[pa], &self.signatures[pb]);
        (0..self.bands)
            .filter(|&band| {
                let r = band * self.rows..(band + 1) * self.rows;
                band_hash(&sa.minima[r.clone()], band) == band_hash(&sb.minima[r], band)
            })
            .count()
    }

    /// Every unordered pair sharing at least one bucket, as sorted positions.
    pub fn candidate_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = HashSet::new();
        for band in &self.buckets {
            for members in band.values() {
                for (i, &a) in members.iter().enumerate() {
                    for &b in &members[i + 1..] {
                        pairs.insert((a.min(b), a.max(b)));
                    }
                }
            }
        }
        let mut pairs: Vec<_> = pairs.into_iter().collect();
        pairs.sort_unstable();
        pairs
    }

    fn buckets(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.buckets.iter().flat_map(|b| b.values()).filter(|m| m.len() > 1)
    }
}

pub fn build_lsh_index(
    sigs: impl IntoIterator<Item = (String, MinHashSignature)>,
    bands: usize,
    rows: usize,
) -> Result<LshIndex> {
    LshIndex::from_signatures(sigs.into_iter().collect(), bands, rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupParams {
    pub num_perm: usize,
    pub bands: usize,
    pub rows: usize,
    pub threshold: f64,
    pub shingle_width: usize,
    pub seed: u64,
    /// Verify candidates with exact shingle Jaccard instead of the estimate.
    pub verify_text: bool,
}

impl Default for DedupParams {
    fn default() -> Self {
        DedupParams {
            num_perm: 256,
            bands: 16,
            rows: 16,
            threshold: 0.8,
            shingle_width: 5,
            seed: 0x5eed_0001,
            verify_text: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateRecord {
    pub dropped_id: String,
    pub representative_id: String,
    pub estimate: f64,
}

#[derive(Debug, Clone)]
pub struct DedupOutput {
    /// Surviving documents in input order.
    pub kept: Vec<Document>,
    /// One record per dropped document, in input order.
    pub duplicates: Vec<DuplicateRecord>,
    /// Number of clusters with more than one member.
    pub clusters: usize,
}

impl DedupOutput {
    pub fn outcomes(&self, all: &[Document]) -> Vec<FilterOutcome> {
        let dropped: HashMap<&str, &DuplicateRecord> =
            self.duplicates.iter().map(|d| (d.dropped_id.as_str(), d)).collect();
        all.iter()
            .map(|d| match dropped.get(d.id.as_str()) {
                Some(rec) => FilterOutcome::rejected(&d.id, STAGE, "near_duplicate").with_score("estimate", rec.estimate),
                None => FilterOutcome::kept(&d.id, STAGE),
            })
            .collect()
    }
}

/// Keep one document per near-duplicate cluster.
///
/// Candidate pairs whose similarity reaches the threshold are unioned; each
/// cluster keeps its longest text (ties: smallest id).
pub fn deduplicate(docs: Vec<Document>, params: &DedupParams) -> Result<DedupOutput> {
    if !(0.0..=1.0).contains(&params.threshold) {
        return Err(Error::invalid("dedup threshold outside [0, 1]"));
    }
    if params.bands * params.rows != params.num_perm {
        return Err(Error::invalid(format!(
            "bands ({}) * rows ({}) != num_perm ({})",
            params.bands, params.rows, params.num_perm
        )));
    }
    let hasher = MinHasher::new(params.num_perm, params.shingle_width, params.seed)?;
    let entries: Vec<(String, MinHashSignature)> = docs
        .par_iter()
        .map(|d| (d.id.clone(), hasher.signature(&d.text)))
        .collect();
    let index = LshIndex::from_signatures(entries, params.bands, params.rows)?;

    let mut uf = UnionFind::new(docs.len());
    for members in index.buckets() {
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                if uf.find(a) == uf.find(b) {
                    continue;
                }
                let sim = if params.verify_text {
                    exact_jaccard(&docs[a].text, &docs[b].text, params.shingle_width)
                } else {
                    estimate_jaccard(index.signature(a), index.signature(b))?
                };
                if sim >= params.threshold {
                    uf.union(a, b);
                }
            }
        }
    }

    let lens: Vec<usize> = docs.iter().map(|d| d.text.chars().count()).collect();
    let mut representative: HashMap<usize, usize> = HashMap::new();
    let mut sizes: HashMap<usize, usize> = HashMap::new();
    for i in 0..docs.len() {
        let root = uf.find(i);
        *sizes.entry(root).or_default() += 1;
        representative
            .entry(root)
            .and_modify(|best| {
                let better = lens[i] > lens[*best] || (lens[i] == lens[*best] && docs[i].id < docs[*best].id);
                if better {
                    *best = i;
                }
            })
            .or_insert(i);
    }

    let mut duplicates = Vec::new();
    let mut kept = Vec::new();
    for (i, doc) in docs.iter().enumerate() {
        let rep = representative[&uf.find(i)];
        if rep == i {
            kept.push(doc.clone());
        } else {
            duplicates.push(DuplicateRecord {
                dropped_id: doc.id.clone(),
                representative_id: docs[rep].id.clone(),
                estimate: estimate_jaccard(index.signature(i), index.signature(rep))?,
            });
        }
    }
    Ok(DedupOutput {
        kept,
        duplicates,
        clusters: sizes.values().filter(|&&s| s > 1).count(),
    })
}

pub fn write_duplicate_report(path: impl AsRef<Path>, records: &[DuplicateRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(prefix: &str, range: std::ops::Range<usize>) -> Vec<String> {
        range.map(|i| format!("{prefix}{i}")).collect()
    }

    /// Element-hash sets with |A ∩ B| = shared and |A \ B| = |B \ A| = extra.
    fn planted_sets(shared: usize, extra: usize, tag: u64) -> (Vec<u64>, Vec<u64>) {
        let h = |s: String| shingle_hash(&format!("{tag}:{s}"));
        let common: Vec<u64> = (0..shared).map(|i| h(format!("c{i}"))).collect();
        let mut a = common.clone();
        let mut b = common;
        a.extend((0..extra).map(|i| h(format!("a{i}"))));
        b.extend((0..extra).map(|i| h(format!("b{i}"))));
        (a, b)
    }

    fn brute_jaccard(a: &[u64], b: &[u64]) -> f64 {
        let sa: HashSet<_> = a.iter().collect();
        let sb: HashSet<_> = b.iter().collect();
        sa.intersection(&sb).count() as f64 / sa.union(&sb).count() as f64
    }

    #[test]
    fn identical_texts_identical_signatures() {
        let t = "el rápido zorro marrón salta sobre el perro perezoso";
        assert_eq!(compute_signature(t, 64, 5, 1).unwrap(), compute_signature(t, 64, 5, 1).unwrap());
        let a = compute_signature(t, 64, 5, 1).unwrap();
        assert_eq!(estimate_jaccard(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn short_text_is_one_shingle() {
        assert_eq!(shingles("Hola   Mundo", 5), vec!["hola mundo".to_string()]);
        assert_eq!(shingles("", 5), vec![String::new()]);
        assert_eq!(shingles("a b c", 2), vec!["a b".to_string(), "b c".to_string()]);
    }

    #[test]
    fn rejects_too_few_permutations() {
        assert!(compute_signature("x", 8, 5, 1).is_err());
    }

    #[test]
    fn disjoint_texts_estimate_near_zero() {
        let a = words("alfa", 0..300).join(" ");
        let b = words("beta", 0..300).join(" ");
        assert_eq!(exact_jaccard(&a, &b, 5), 0.0);
        let sa = compute_signature(&a, 256, 5, 7).unwrap();
        let sb = compute_signature(&b, 256, 5, 7).unwrap();
        assert!(estimate_jaccard(&sa, &sb).unwrap() <= 0.05);
    }

    #[test]
    fn half_overlap_within_three_sigma() {
        let (a, b) = planted_sets(100, 50, 1);
        assert_eq!(brute_jaccard(&a, &b), 0.5);
        let hasher = MinHasher::new(256, 1, 99).unwrap();
        let est = estimate_jaccard(&hasher.signature_from_hashes(a), &hasher.signature_from_hashes(b)).unwrap();
        assert!((est - 0.5).abs() <= 0.10, "{est}");
    }

    #[test]
    fn mismatched_parameters_incompatible() {
        let a = compute_signature("a b c", 32, 5, 1).unwrap();
        let b = compute_signature("a b c", 64, 5, 1).unwrap();
        let err = estimate_jaccard(&a, &b).unwrap_err();
        assert!(err.to_string().contains("incompatible signatures"));
        let c = compute_signature("a b c", 32, 4, 1).unwrap();
        assert!(estimate_jaccard(&a, &c).is_err());
        let d = compute_signature("a b c", 32, 5, 2).unwrap();
        assert!(estimate_jaccard(&a, &d).is_err());
    }

    #[test]
    fn estimator_is_unbiased_over_seeds() {
        let (a, b) = planted_sets(60, 20, 3);
        let truth = brute_jaccard(&a, &b);
        let mean: f64 = (0..200u64)
            .map(|seed| {
                let h = MinHasher::new(64, 1, seed).unwrap();
                estimate_jaccard(&h.signature_from_hashes(a.clone()), &h.signature_from_hashes(b.clone())).unwrap()
            })
            .sum::<f64>()
            / 200.0;
        assert!((mean - truth).abs() <= 0.02, "mean {mean} truth {truth}");
    }

    #[test]
    fn index_membership_and_errors() {
        let h = MinHasher::new(32, 2, 5).unwrap();
        let s = h.signature("uno dos tres cuatro");
        let mut idx = LshIndex::new(8, 4).unwrap();
        idx.insert("a", s.clone()).unwrap();
        idx.insert("b", s.clone()).unwrap();
        assert_eq!(idx.bucket_memberships("a"), 8);
        assert_eq!(idx.shared_bands("a", "b"), 8);
        assert_eq!(idx.candidate_pairs(), vec![(0, 1)]);
        assert!(matches!(idx.insert("a", s.clone()), Err(Error::DuplicateId(_))));
        let mut wrong = LshIndex::new(4, 4).unwrap();
        assert!(wrong.insert("a", s).is_err());
    }

    #[test]
    fn bulk_and_incremental_index_agree() {
        let h = MinHasher::new(32, 2, 5).unwrap();
        let texts = ["uno dos tres", "uno dos tres cuatro", "cinco seis siete", "uno dos tres"];
        let entries: Vec<_> = texts.iter().enumerate().map(|(i, t)| (format!("d{i}"), h.signature(t))).collect();
        let bulk = build_lsh_index(entries.clone(), 8, 4).unwrap();
        let mut inc = LshIndex::new(8, 4).unwrap();
        for (id, s) in entries {
            inc.insert(id, s).unwrap();
        }
        assert_eq!(bulk.candidate_pairs(), inc.candidate_pairs());
        assert!(bulk.candidate_pairs().contains(&(0, 3)));
    }

    #[test]
    fn candidate_probability_formula() {
        assert!((candidate_probability(0.9, 16, 16) - 0.963).abs() < 0.001);
        assert!(candidate_probability(0.3, 16, 16) < 1e-7);
    }

    fn doc(id: &str, text: &str) -> Document {
        Document::new(id, text, "test")
    }

    #[test]
    fn distinct_corpus_untouched() {
        let docs: Vec<_> = (0..20).map(|i| doc(&format!("d{i}"), &words(&format!("w{i}x"), 0..40).join(" "))).collect();
        let out = deduplicate(docs.clone(), &DedupParams::default()).unwrap();
        assert_eq!(out.kept, docs);
        assert!(out.duplicates.is_empty());
        assert_eq!(out.clusters, 0);
    }

    #[test]
    fn verbatim_copies_collapse() {
        let text = words("palabra", 0..60).join(" ");
        let mut docs: Vec<_> = (0..5).map(|i| doc(&format!("copy{i}"), &text)).collect();
        docs.push(doc("other", &words("otra", 0..60).join(" ")));
        let out = deduplicate(docs, &DedupParams::default()).unwrap();
        assert_eq!(out.kept.len(), 2);
        assert_eq!(out.duplicates.len(), 4);
        assert_eq!(out.clusters, 1);
        assert!(out.duplicates.iter().all(|d| d.representative_id == "copy0" && d.estimate == 1.0));
    }

    #[test]
    fn longest_text_represents_cluster() {
        let base = words("p", 0..100).join(" ");
        let longer = format!("{base} extra");
        let docs = vec![doc("z", &longer), doc("a", &base)];
        let params = DedupParams { threshold: 0.9, ..Default::default() };
        let out = deduplicate(docs, &params).unwrap();
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.kept[0].id, "z");
        let docs = vec![doc("z", &base), doc("a", &base)];
        assert_eq!(deduplicate(docs, &params).unwrap().kept[0].id, "a");
    }

    #[test]
    fn dedup_is_idempotent_and_order_free() {
        let mut docs = Vec::new();
        for i in 0..30 {
            let base = words(&format!("t{i}_"), 0..50);
            docs.push(doc(&format!("d{i}"), &base.join(" ")));
            if i % 3 == 0 {
                let mut near = base.clone();
                near[25] = "cambio".into();
                docs.push(doc(&format!("d{i}b"), &near.join(" ")));
            }
        }
        let params = DedupParams { threshold: 0.7, bands: 64, rows: 4, ..Default::default() };
        let once = deduplicate(docs.clone(), &params).unwrap();
        let twice = deduplicate(once.kept.clone(), &params).unwrap();
        assert_eq!(once.kept, twice.kept);

        let mut reversed = docs.clone();
        reversed.reverse();
        let rev = deduplicate(reversed, &params).unwrap();
        let ids = |o: &DedupOutput| {
            let mut v: Vec<_> = o.kept.iter().map(|d| d.id.clone()).collect();
            v.sort();
            v
        };
        assert_eq!(ids(&once), ids(&rev));
        let pairs = |o: &DedupOutput| {
            let mut v: Vec<_> = o.duplicates.iter().map(|d| (d.dropped_id.clone(), d.representative_id.clone())).collect();
            v.sort();
            v
        };
        assert_eq!(pairs(&once), pairs(&rev));
        assert_eq!(once.duplicates.len(), 10);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let docs = vec![doc("a", "uno dos"), doc("a", "tres cuatro")];
        assert!(matches!(deduplicate(docs, &DedupParams::default()), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn full_text_verification_flag() {
        let base = words("q", 0..80).join(" ");
        let docs = vec![doc("a", &base), doc("b", &base)];
        let params = DedupParams { verify_text: true, ..Default::default() };
        assert_eq!(deduplicate(docs, &params).unwrap().kept.len(), 1);
    }
}
