//! Hashed-feature logistic regression and the Pareto keep rule.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::distributions::Open01;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, FilterOutcome};
use crate::error::{Error, Result};
use crate::hashing::{doc_rng, hash_str};

pub const STAGE: &str = "quality";
pub const DEFAULT_DIM: usize = 1 << 20;
pub const MIN_DIM: usize = 1 << 10;
pub const DEFAULT_ALPHA: f64 = 9.0;
pub const MODEL_VERSION: u32 = 1;

/// Sparse feature vector sorted by index.
pub type Features = Vec<(u32, f64)>;

/// Lowercased whitespace words hashed with XXH64 into `[0, dim)`; counts are
/// L2-normalized.
pub fn hash_features(text: &str, dim: usize, seed: u64) -> Features {
    assert!(dim.is_power_of_two(), "feature dimension must be a power of two");
    let mask = (dim - 1) as u64;
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for word in text.split_whitespace() {
        let idx = (hash_str(&word.to_lowercase(), seed) & mask) as u32;
        *counts.entry(idx).or_default() += 1.0;
    }
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    counts.into_iter().map(|(i, c)| (i, c / norm)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "valid")]
    Valid,
    #[serde(rename = "non-valid")]
    NonValid,
}

impl Label {
    fn target(self) -> f64 {
        match self {
            Label::Valid => 1.0,
            Label::NonValid => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledText {
    pub text: String,
    pub label: Label,
    #[serde(default)]
    pub origin: String,
}

impl LabeledText {
    pub fn new(text: impl Into<String>, label: Label) -> Self {
        LabeledText { text: text.into(), label, origin: String::new() }
    }
}

/// Read `{text, label}` JSON lines.
pub fn read_labeled(path: impl AsRef<Path>) -> Result<Vec<LabeledText>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { dim: DEFAULT_DIM, epochs: 10, lr: 0.5, l2: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    dim: usize,
    hash_seed: u64,
    bias: f64,
    epochs: usize,
    lr: f64,
    l2: f64,
    epoch_losses: Vec<f64>,
    /// Non-zero weights only.
    weights: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct QualityModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub hash_seed: u64,
    pub params: TrainParams,
    /// Mean regularized training loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TryFrom<ModelFile> for QualityModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.version != MODEL_VERSION {
            return Err(Error::invalid(format!("unsupported model version {}", f.version)));
        }
        let mut model = QualityModel::zeros(f.dim, f.hash_seed)?;
        for (i, w) in f.weights {
            let slot = model
                .weights
                .get_mut(i as usize)
                .ok_or_else(|| Error::invalid(format!("weight index {i} outside dimension {}", f.dim)))?;
            *slot = w;
        }
        model.bias = f.bias;
        model.params = TrainParams { dim: f.dim, epochs: f.epochs, lr: f.lr, l2: f.l2, seed: f.hash_seed };
        model.epoch_losses = f.epoch_losses;
        model.check_finite()?;
        Ok(model)
    }
}

impl From<QualityModel> for ModelFile {
    fn from(m: QualityModel) -> Self {
        let weights = m
            .weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, w)| (i as u32, *w))
            .collect();
        ModelFile {
            version: MODEL_VERSION,
            dim: m.weights.len(),
            hash_seed: m.hash_seed,
            bias: m.bias,
            epochs: m.params.epochs,
            lr: m.params.lr,
            l2: m.params.l2,
            epoch_losses: m.epoch_losses,
            weights,
        }
    }
}

impl QualityModel {
    pub fn zeros(dim: usize, hash_seed: u64) -> Result<Self> {
        if !dim.is_power_of_two() || dim < MIN_DIM {
            return Err(Error::invalid(format!("dimension {dim} must be a power of two >= {MIN_DIM}")));
        }
        Ok(QualityModel {
            weights: vec![0.0; dim],
            bias: 0.0,
            hash_seed,
            params: TrainParams { dim, epochs: 0, seed: hash_seed, ..TrainParams::default() },
            epoch_losses: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn features(&self, text: &str) -> Features {
        hash_features(text, self.dim(), self.hash_seed)
    }

    fn margin(&self, x: &Features) -> f64 {
        self.bias + x.iter().map(|&(i, v)| self.weights[i as usize] * v).sum::<f64>()
    }

    fn check_finite(&self) -> Result<()> {
        if self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite()) {
            Ok(())
        } else {
            Err(Error::Invariant("non-finite model weights".into()))
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `-[y ln p + (1-y) ln(1-p)]` for `p = sigmoid(z)`.
fn log_loss(z: f64, y: f64) -> f64 {
    let softplus = |t: f64| if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
    y * softplus(-z) + (1.0 - y) * softplus(z)
}

pub fn quality_score(model: &QualityModel, text: &str) -> f64 {
    sigmoid(model.margin(&model.features(text)))
}

/// Mean log loss plus `l2/2 ||w||²` over dense weights, with its gradient
/// with respect to the weights and the bias. This is the objective whose
/// per-example terms drive [`train_quality_model`].
pub fn loss_and_gradient(weights: &[f64], bias: f64, examples: &[(Features, f64)], l2: f64) -> (f64, Vec<f64>, f64) {
    let n = examples.len() as f64;
    let mut grad: Vec<f64> = weights.iter().map(|w| l2 * w).collect();
    let mut grad_bias = 0.0;
    let mut loss = 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    for (x, y) in examples {
        let z = bias + x.iter().map(|&(i, v)| weights[i as usize] * v).sum::<f64>();
        loss += log_loss(z, *y) / n;
        let r = (sigmoid(z) - y) / n;
        for &(i, v) in x {
            grad[i as usize] += r * v;
        }
        grad_bias += r;
    }
    (loss, grad, grad_bias)
}

/// Plain SGD on log loss with L2 weight decay (bias unregularized).
///
/// Each epoch visits the examples in an order drawn from a generator seeded
/// by `params.seed`. Weights are stored as `scale * v` so the decay step
/// costs O(1) per example.
pub fn train_quality_model(data: &[LabeledText], params: &TrainParams) -> Result<QualityModel> {
    if !(params.lr > 0.0 && params.lr.is_finite()) || !(params.l2 >= 0.0) {
        return Err(Error::invalid("learning rate must be positive and l2 non-negative"));
    }
    if params.lr * params.l2 >= 1.0 {
        return Err(Error::invalid("lr * l2 must be below 1"));
    }
    let has = |l| data.iter().any(|d| d.label == l);
    if !has(Label::Valid) || !has(Label::NonValid) {
        return Err(Error::SingleClass);
    }
    let mut model = QualityModel::zeros(params.dim, params.seed)?;
    model.params = *params;
    let examples: Vec<(Features, f64)> = data
        .iter()
        .map(|d| (hash_features(&d.text, params.dim, params.seed), d.label.target()))
        .collect();

    let mut v = vec![0.0; params.dim];
    let mut scale = 1.0;
    let mut bias = 0.0;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let decay = 1.0 - params.lr * params.l2;
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &j in &order {
            let (x, y) = &examples[j];
            let z = bias + scale * x.iter().map(|&(i, xv)| v[i as usize] * xv).sum::<f64>();
            let r = sigmoid(z) - y;
            scale *= decay;
            for &(i, xv) in x {
                v[i as usize] -= params.lr * r * xv / scale;
            }
            bias -= params.lr * r;
            if scale < 1e-100 {
                v.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
        }
        let w: Vec<f64> = v.iter().map(|x| x * scale).collect();
        let (loss, _, _) = loss_and_gradient(&w, bias, &examples, params.l2);
        model.epoch_losses.push(loss);
    }
    model.weights = v.into_iter().map(|x| x * scale).collect();
    model.bias = bias;
    model.check_finite()?;
    Ok(model)
}

/// Fraction of examples whose thresholded score matches the label.
pub fn accuracy(model: &QualityModel, data: &[LabeledText]) -> f64 {
    let hits = data
        .iter()
        .filter(|d| (quality_score(model, &d.text) >= 0.5) == (d.label == Label::Valid))
        .count();
    hits as f64 / data.len().max(1) as f64
}

/// Draw X with survival `(1 + t)^-alpha` and keep iff `X > 1 - score`.
///
/// X is drawn by inversion as `U^(-1/alpha) - 1` with U uniform on (0, 1),
/// so the test reduces to `U < (2 - score)^-alpha`.
pub fn pareto_keep<R: Rng + ?Sized>(score: f64, alpha: f64, rng: &mut R) -> bool {
    assert!(alpha > 0.0, "alpha must be positive");
    let u: f64 = rng.sample(Open01);
    u < pareto_keep_probability(score, alpha)
}

/// Closed-form `P(X > 1 - score)`.
pub fn pareto_keep_probability(score: f64, alpha: f64) -> f64 {
    (2.0 - score.clamp(0.0, 1.0)).powf(-alpha)
}

pub fn quality_filter_stage(docs: &[Document], model: &QualityModel, alpha: f64, seed: u64) -> Result<Vec<FilterOutcome>> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha must be positive"));
    }
    Ok(docs
        .par_iter()
        .map(|doc| {
            let score = quality_score(model, &doc.text);
            let mut rng = doc_rng(seed, STAGE, &doc.id);
            let outcome = if pareto_keep(score, alpha, &mut rng) {
                FilterOutcome::kept(&doc.id, STAGE)
            } else {
                FilterOutcome::rejected(&doc.id, STAGE, "pareto_rejected")
            };
            outcome.with_score("quality", score)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    const SMALL: usize = 1 << 12;

    #[test]
    fn empty_text_is_zero_vector() {
        assert!(hash_features("", SMALL, 0).is_empty());
        assert!(hash_features(" \n\t", SMALL, 0).is_empty());
    }

    #[test]
    fn hand_hashed_counts() {
        let mask = (SMALL - 1) as u64;
        let ia = (xxhash_rust::xxh64::xxh64(b"a", 7) & mask) as u32;
        let ib = (xxhash_rust::xxh64::xxh64(b"b", 7) & mask) as u32;
        assert_ne!(ia, ib);
        let f = hash_features("a A b", SMALL, 7);
        let norm = 5f64.sqrt();
        let mut expected = vec![(ia, 2.0 / norm), (ib, 1.0 / norm)];
        expected.sort_by_key(|e| e.0);
        assert_eq!(f.len(), 2);
        for ((i, v), (j, w)) in f.iter().zip(&expected) {
            assert_eq!(i, j);
            assert!((v - w).abs() < 1e-15);
        }
    }

    #[test]
    fn seed_moves_indices() {
        let text = "uno dos tres cuatro cinco seis siete ocho";
        assert_ne!(hash_features(text, SMALL, 1), hash_features(text, SMALL, 2));
    }

    proptest! {
        #[test]
        fn features_unit_norm(text in "[a-z ]{0,80}") {
            let f = hash_features(&text, SMALL, 3);
            let norm: f64 = f.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
            if text.split_whitespace().next().is_some() {
                prop_assert!((norm - 1.0).abs() < 1e-12);
            } else {
                prop_assert!(f.is_empty());
            }
            prop_assert_eq!(f.clone(), hash_features(&text, SMALL, 3));
        }
    }

    #[test]
    fn score_edge_cases() {
        let mut m = QualityModel::zeros(SMALL, 0).unwrap();
        assert_eq!(quality_score(&m, "cualquier cosa"), 0.5);
        assert_eq!(quality_score(&m, ""), 0.5);
        m.bias = 30.0;
        assert!(quality_score(&m, "x") > 1.0 - 1e-9);
    }

    #[test]
    fn single_weight_model_by_hand() {
        let mut m = QualityModel::zeros(SMALL, 5).unwrap();
        let idx = hash_features("bueno", SMALL, 5)[0].0;
        m.weights[idx as usize] = 2.0;
        let s = quality_score(&m, "bueno");
        assert!((s - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
        assert!((s - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn sigmoid_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((log_loss(-800.0, 1.0) - 800.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_dimensions() {
        assert!(QualityModel::zeros(1000, 0).is_err());
        assert!(QualityModel::zeros(512, 0).is_err());
    }

    fn separable() -> Vec<LabeledText> {
        let good = ["good", "great", "fine", "nice", "clear", "solid"];
        let bad = ["zzz", "qqq", "xxx", "vvv", "kkk", "jjj"];
        let mut data = Vec::new();
        for i in 0..20 {
            let g: Vec<&str> = (0..4).map(|j| good[(i + j * 5) % good.len()]).collect();
            let b: Vec<&str> = (0..4).map(|j| bad[(i * 3 + j) % bad.len()]).collect();
            data.push(LabeledText::new(g.join(" "), Label::Valid));
            data.push(LabeledText::new(b.join(" "), Label::NonValid));
        }
        data
    }

    fn small_params(epochs: usize) -> TrainParams {
        TrainParams { dim: SMALL, epochs, lr: 0.5, l2: 1e-4, seed: 11 }
    }

    #[test]
    fn separable_data_reaches_full_accuracy() {
        let data = separable();
        let m = train_quality_model(&data, &small_params(50)).unwrap();
        assert_eq!(accuracy(&m, &data), 1.0);
        let first = m.epoch_losses[0];
        let last = *m.epoch_losses.last().unwrap();
        assert!(last < first);
    }

    #[test]
    fn zero_epochs_scores_half() {
        let m = train_quality_model(&separable(), &small_params(0)).unwrap();
        assert!(m.weights.iter().all(|w| *w == 0.0));
        assert_eq!(quality_score(&m, "good great"), 0.5);
    }

    #[test]
    fn single_class_rejected() {
        let data = vec![LabeledText::new("a", Label::Valid), LabeledText::new("b", Label::Valid)];
        assert!(matches!(train_quality_model(&data, &small_params(1)), Err(Error::SingleClass)));
    }

    #[test]
    fn training_deterministic() {
        let a = train_quality_model(&separable(), &small_params(5)).unwrap();
        let b = train_quality_model(&separable(), &small_params(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicated_data_keeps_decisions() {
        let data = separable();
        let doubled: Vec<_> = data.iter().chain(&data).cloned().collect();
        let a = train_quality_model(&data, &small_params(20)).unwrap();
        let b = train_quality_model(&doubled, &small_params(20)).unwrap();
        let probes = ["good nice", "zzz kkk", "fine zzz clear", "qqq xxx great", "solid"];
        for p in probes {
            assert_eq!(quality_score(&a, p) >= 0.5, quality_score(&b, p) >= 0.5, "{p}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dim = 10;
        let examples: Vec<(Features, f64)> = (0..12)
            .map(|_| {
                let mut x = Features::new();
                for i in 0..dim as u32 {
                    if rng.gen_bool(0.6) {
                        x.push((i, rng.gen_range(-1.0..1.0)));
                    }
                }
                (x, if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
            })
            .collect();
        let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = 0.3;
        let l2 = 0.05;
        let (_, g, gb) = loss_and_gradient(&w, b, &examples, l2);
        let h = 1e-6;
        for i in 0..dim {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += h;
            wm[i] -= h;
            let fd = (loss_and_gradient(&wp, b, &examples, l2).0 - loss_and_gradient(&wm, b, &examples, l2).0) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-3), "{i}: {fd} vs {}", g[i]);
        }
        let fd = (loss_and_gradient(&w, b + h, &examples, l2).0 - loss_and_gradient(&w, b - h, &examples, l2).0) / (2.0 * h);
        assert!((fd - gb).abs() <= 1e-5 * gb.abs().max(1e-3));
    }

    #[test]
    fn model_file_round_trip() {
        let m = train_quality_model(&separable(), &small_params(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.json");
        m.save(&p).unwrap();
        assert_eq!(QualityModel::load(&p).unwrap(), m);
    }

    #[test]
    fn labels_parse() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.jsonl");
        fs::write(&p, "{\"text\":\"a\",\"label\":\"valid\"}\n\n{\"text\":\"b\",\"label\":\"non-valid\",\"origin\":\"mc4\"}\n").unwrap();
        let l = read_labeled(&p).unwrap();
        assert_eq!(l[1].label, Label::NonValid);
        assert_eq!(l[1].origin, "mc4");
        fs::write(&p, "{\"text\":\"a\",\"label\":\"maybe\"}\n").unwrap();
        assert!(matches!(read_labeled(&p), Err(Error::Malformed { line: 1, .. })));
    }

    #[test]
    fn keep_probability_closed_form() {
        assert!((pareto_keep_probability(0.5, 9.0) - 1.5f64.powi(-9)).abs() < 1e-15);
        assert!((pareto_keep_probability(0.5, 9.0) - 0.0260).abs() < 1e-4);
        assert!((pareto_keep_probability(0.0, 9.0) - 0.001953125).abs() < 1e-12);
        assert_eq!(pareto_keep_probability(1.0, 9.0), 1.0);
        assert_eq!(pareto_keep_probability(0.999, 1e6), 0.0);
    }

    #[test]
    fn perfect_score_always_kept() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..100_000).all(|_| pareto_keep(1.0, 9.0, &mut rng)));
    }

    #[test]
    fn monte_carlo_monotone_in_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 200_000;
        let rates: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&s| (0..n).filter(|_| pareto_keep(s, 2.0, &mut rng)).count() as f64 / n as f64)
            .collect();
        for (s, r) in [0.0, 0.25, 0.5, 0.75, 1.0].iter().zip(&rates) {
            assert!((r - pareto_keep_probability(*s, 2.0)).abs() < 0.005);
        }
        assert!(rates.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn filter_stage_is_deterministic_across_thread_counts() {
        let docs: Vec<Document> = (0..500).map(|i| Document::new(format!("d{i}"), format!("w{} w{}", i % 17, i % 5), "mc4")).collect();
        let m = train_quality_model(
            &[LabeledText::new("w1 w2", Label::Valid), LabeledText::new("w3 w4", Label::NonValid)],
            &small_params(5),
        )
        .unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| quality_filter_stage(&docs, &m, 2.0, 7).unwrap());
        let b = four.install(|| quality_filter_stage(&docs, &m, 2.0, 7).unwrap());
        assert_eq!(a, b);
        assert!(a.iter().all(|o| o.scores.contains_key("quality")));
        assert!(quality_filter_stage(&docs, &m, 0.0, 7).is_err());
    }
}
