//! Macro-F1, rank-based model comparison and critical-difference diagrams.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 0.001;

/// Unweighted mean over `labels` of per-label F1; a 0/0 precision or recall
/// counts as 0.
pub fn macro_f1<L: PartialEq>(gold: &[L], pred: &[L], labels: &[L]) -> Result<f64> {
    if gold.len() != pred.len() {
        return Err(Error::invalid(format!("gold has {} labels, pred has {}", gold.len(), pred.len())));
    }
    if gold.is_empty() || labels.is_empty() {
        return Err(Error::invalid("macro F1 needs at least one item and one label"));
    }
    let mut total = 0.0;
    for l in labels {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fneg = 0usize;
        for (g, p) in gold.iter().zip(pred) {
            match (g == l, p == l) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                _ => {}
            }
        }
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
        if precision + recall > 0.0 {
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(total / labels.len() as f64)
}

/// Token-level NER macro-F1: sentences are flattened and every token label
/// is scored on its own, with no grouping of sub-tokens. The label set is the
/// union of gold and predicted labels.
pub fn token_macro_f1(gold: &[Vec<String>], pred: &[Vec<String>]) -> Result<f64> {
    if gold.len() != pred.len() || gold.iter().zip(pred).any(|(g, p)| g.len() != p.len()) {
        return Err(Error::invalid("gold and predicted sequences differ in shape"));
    }
    let g: Vec<&String> = gold.iter().flatten().collect();
    let p: Vec<&String> = pred.iter().flatten().collect();
    let labels: Vec<&String> = g.iter().chain(&p).copied().collect::<BTreeSet<_>>().into_iter().collect();
    macro_f1(&g, &p, &labels)
}

/// Datasets by models; `None` marks a missing score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub datasets: Vec<String>,
    pub models: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl ScoreMatrix {
    pub fn new(datasets: Vec<String>, models: Vec<String>, cells: Vec<Vec<Option<f64>>>) -> Result<Self> {
        if datasets.len() < 2 || models.len() < 2 {
            return Err(Error::invalid("score matrix needs at least 2 datasets and 2 models"));
        }
        if cells.len() != datasets.len() || cells.iter().any(|r| r.len() != models.len()) {
            return Err(Error::invalid("score matrix shape does not match its labels"));
        }
        if cells.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("score matrix has non-finite cells"));
        }
        for (name, row) in datasets.iter().zip(&cells) {
            match row.iter().flatten().count() {
                0 => return Err(Error::EmptyRow(name.clone())),
                1 => return Err(Error::invalid(format!("row {name} has fewer than 2 present cells"))),
                _ => {}
            }
        }
        Ok(ScoreMatrix { datasets, models, cells })
    }

    /// CSV with a header of model names after a first dataset column; empty
    /// cells are missing.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn from_reader(reader: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let models: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_string).collect();
        let mut datasets = Vec::new();
        let mut cells = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let name = rec.get(0).unwrap_or_default().to_string();
            let row = rec
                .iter()
                .skip(1)
                .map(|c| match c {
                    "" | "-" | "---" => Ok(None),
                    v => v
                        .parse::<f64>()
                        .map(Some)
                        .map_err(|_| Error::invalid(format!("row {name}: cannot parse score {v:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            datasets.push(name);
            cells.push(row);
        }
        Self::new(datasets, models, cells)
    }

    pub fn n(&self) -> usize {
        self.datasets.len()
    }

    pub fn k(&self) -> usize {
        self.models.len()
    }

    fn complete_rows(&self) -> Result<Vec<Vec<f64>>> {
        self.datasets
            .iter()
            .zip(&self.cells)
            .map(|(name, row)| {
                row.iter()
                    .copied()
                    .collect::<Option<Vec<f64>>>()
                    .ok_or_else(|| Error::MissingCells(name.clone()))
            })
            .collect()
    }
}

/// Fill each missing cell with its row minimum minus `epsilon`.
pub fn impute_missing(m: &ScoreMatrix, epsilon: f64) -> Result<ScoreMatrix> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let mut out = m.clone();
    for (name, row) in out.datasets.iter().zip(out.cells.iter_mut()) {
        let min = row
            .iter()
            .flatten()
            .copied()
            .reduce(f64::min)
            .ok_or_else(|| Error::EmptyRow(name.clone()))?;
        for cell in row.iter_mut().filter(|c| c.is_none()) {
            *cell = Some(min - epsilon);
        }
    }
    Ok(out)
}

/// Fractional ranks of one row: rank 1 is best, ties share the mean rank.
pub fn rank_row(scores: &[f64], higher_is_better: bool) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let key = |i: usize| if higher_is_better { -scores[i] } else { scores[i] };
    order.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = mean;
        }
        i = j + 1;
    }
    ranks
}

/// Mean rank of every model over all datasets, in model order.
pub fn average_ranks(m: &ScoreMatrix, higher_is_better: bool) -> Result<Vec<f64>> {
    let rows = m.complete_rows()?;
    let mut sums = vec![0.0; m.k()];
    for row in &rows {
        for (s, r) in sums.iter_mut().zip(rank_row(row, higher_is_better)) {
            *s += r;
        }
    }
    Ok(sums.into_iter().map(|s| s / m.n() as f64).collect())
}

/// Friedman chi-square: `12N/(k(k+1)) * (Σ R̄² − k(k+1)²/4)`.
pub fn friedman_statistic(m: &ScoreMatrix) -> Result<f64> {
    let ranks = average_ranks(m, true)?;
    let (n, k) = (m.n() as f64, m.k() as f64);
    let sum_sq: f64 = ranks.iter().map(|r| r * r).sum();
    Ok(12.0 * n / (k * (k + 1.0)) * (sum_sq - k * (k + 1.0) * (k + 1.0) / 4.0))
}

/// Critical values of the studentized range divided by sqrt(2), for
/// k = 2..=10 (Demšar, JMLR 7, 2006, Table 5).
const Q_05: [f64; 9] = [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164];
const Q_10: [f64; 9] = [1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920];

pub fn q_alpha(k: usize, alpha: f64) -> Result<f64> {
    let table = if alpha == 0.05 {
        &Q_05
    } else if alpha == 0.10 {
        &Q_10
    } else {
        return Err(Error::QTableRange { k, alpha });
    };
    if !(2..=10).contains(&k) {
        return Err(Error::QTableRange { k, alpha });
    }
    Ok(table[k - 2])
}

/// `q_alpha(k) * sqrt(k(k+1) / (6N))`.
pub fn critical_distance(k: usize, n: usize, alpha: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("at least 2 datasets are required"));
    }
    Ok(q_alpha(k, alpha)? * ((k * (k + 1)) as f64 / (6.0 * n as f64)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub models: Vec<String>,
    pub average_ranks: Vec<f64>,
    pub n: usize,
    pub alpha: f64,
    pub cd: f64,
    /// `significant[i][j]` iff the rank gap between models i and j exceeds CD.
    pub significant: Vec<Vec<bool>>,
    /// Maximal rank-contiguous sets whose extreme ranks lie within CD,
    /// ordered from best rank; singletons are left out.
    pub groups: Vec<Vec<String>>,
}

impl RankReport {
    fn index(&self, model: &str) -> Option<usize> {
        self.models.iter().position(|m| m == model)
    }

    pub fn rank_of(&self, model: &str) -> Option<f64> {
        self.index(model).map(|i| self.average_ranks[i])
    }

    pub fn is_significant(&self, a: &str, b: &str) -> Option<bool> {
        Some(self.significant[self.index(a)?][self.index(b)?])
    }

    /// Model indices sorted by average rank (ties by name).
    fn by_rank(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.models.len()).collect();
        idx.sort_by(|&a, &b| {
            self.average_ranks[a]
                .total_cmp(&self.average_ranks[b])
                .then_with(|| self.models[a].cmp(&self.models[b]))
        });
        idx
    }
}

pub fn nemenyi(models: &[String], avg_ranks: &[f64], n: usize, alpha: f64) -> Result<RankReport> {
    let k = models.len();
    if avg_ranks.len() != k {
        return Err(Error::invalid("one average rank per model is required"));
    }
    let cd = critical_distance(k, n, alpha)?;
    let significant = (0..k)
        .map(|i| (0..k).map(|j| (avg_ranks[i] - avg_ranks[j]).abs() > cd).collect())
        .collect();
    let mut report = RankReport {
        models: models.to_vec(),
        average_ranks: avg_ranks.to_vec(),
        n,
        alpha,
        cd,
        significant,
        groups: Vec::new(),
    };
    let order = report.by_rank();
    let mut last_end = 0;
    for i in 0..k {
        let mut j = i;
        while j + 1 < k && avg_ranks[order[j + 1]] - avg_ranks[order[i]] <= cd {
            j += 1;
        }
        if j > i && j > last_end {
            report.groups.push(order[i..=j].iter().map(|&x| models[x].clone()).collect());
            last_end = j;
        }
    }
    Ok(report)
}

/// Impute, rank and test in one step.
pub fn compare_models(m: &ScoreMatrix, epsilon: f64, alpha: f64) -> Result<RankReport> {
    let filled = impute_missing(m, epsilon)?;
    let ranks = average_ranks(&filled, true)?;
    nemenyi(&filled.models, &ranks, filled.n(), alpha)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// SVG critical-difference diagram.
pub fn cd_diagram_svg(report: &RankReport) -> String {
    let k = report.models.len();
    let (width, left, right) = (640.0, 140.0, 500.0);
    let axis_y = 70.0;
    let x = |r: f64| left + (r - 1.0) / ((k - 1).max(1) as f64) * (right - left);
    let order = report.by_rank();
    let label_rows = k.div_ceil(2);
    let group_top = axis_y + 20.0;
    let labels_top = group_top + 12.0 * report.groups.len() as f64 + 20.0;
    let height = labels_top + 22.0 * label_rows as f64 + 10.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let cd_end = x(1.0 + report.cd);
    let _ = writeln!(s, r#"<line x1="{:.2}" y1="20" x2="{cd_end:.2}" y2="20" stroke="black" stroke-width="2"/>"#, x(1.0));
    let _ = writeln!(s, r#"<text x="{:.2}" y="14" text-anchor="middle">CD = {:.3}</text>"#, (x(1.0) + cd_end) / 2.0, report.cd);
    let _ = writeln!(s, r#"<line x1="{left:.2}" y1="{axis_y:.2}" x2="{right:.2}" y2="{axis_y:.2}" stroke="black"/>"#);
    for r in 1..=k {
        let px = x(r as f64);
        let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{axis_y:.2}" stroke="black"/>"#, axis_y - 6.0);
        let _ = writeln!(s, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{r}</text>"#, axis_y - 10.0);
    }
    for (gi, group) in report.groups.iter().enumerate() {
        let ranks: Vec<f64> = group.iter().filter_map(|m| report.rank_of(m)).collect();
        let lo = ranks.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ranks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let y = group_top + 12.0 * gi as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black" stroke-width="4"/>"#,
            x(lo) - 3.0,
            x(hi) + 3.0
        );
    }
    for (pos, &i) in order.iter().enumerate() {
        let r = report.average_ranks[i];
        let px = x(r);
        let on_left = pos < label_rows;
        let row = if on_left { pos } else { k - 1 - pos };
        let y = labels_top + 22.0 * row as f64;
        let (tx, anchor) = if on_left { (left - 10.0, "end") } else { (right + 10.0, "start") };
        let name = xml_escape(&report.models[i]);
        let _ = writeln!(
            s,
            r#"<polyline points="{px:.2},{axis_y:.2} {px:.2},{y:.2} {tx:.2},{y:.2}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(s, r#"<text x="{tx:.2}" y="{:.2}" text-anchor="{anchor}">{name} ({r:.2})</text>"#, y - 4.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Companion table: one row per model with its rank, CD and the
/// significance verdict against every other model.
pub fn cd_diagram_csv(report: &RankReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["model".to_string(), "average_rank".into(), "cd".into()];
    header.extend(report.models.iter().map(|m| format!("significant_vs_{m}")));
    w.write_record(&header)?;
    for (i, m) in report.models.iter().enumerate() {
        let mut rec = vec![m.clone(), format!("{:.6}", report.average_ranks[i]), format!("{:.6}", report.cd)];
        rec.extend(report.significant[i].iter().map(|b| b.to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Write `<out>` as SVG and the CSV companion next to it.
pub fn render_cd_diagram(report: &RankReport, out: impl AsRef<Path>) -> Result<()> {
    let out = out.as_ref();
    fs::write(out, cd_diagram_svg(report)).map_err(|e| Error::io(out, e))?;
    let csv_path = out.with_extension("csv");
    fs::write(&csv_path, cd_diagram_csv(report)?).map_err(|e| Error::io(&csv_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table1() -> ScoreMatrix {
        ScoreMatrix::from_csv(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/table1.csv")).unwrap()
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn macro_f1_cases() {
        assert_eq!(macro_f1(&["A", "B"], &["A", "B"], &["A", "B"]).unwrap(), 1.0);
        let g = ["A", "A", "B", "B"];
        let p = ["A", "B", "A", "B"];
        assert_eq!(macro_f1(&g, &p, &["A", "B"]).unwrap(), 0.5);
        assert!((macro_f1(&g, &p, &["A", "B", "C"]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(macro_f1(&["A"], &["A", "B"], &["A"]).is_err());
    }

    #[test]
    fn token_level_ner() {
        let g = vec![names(&["O", "B-PER", "I-PER"]), names(&["O"])];
        let p = vec![names(&["O", "B-PER", "O"]), names(&["O"])];
        // O: P 2/3 R 1 -> 0.8; B-PER: 1; I-PER: 0
        assert!((token_macro_f1(&g, &p).unwrap() - 1.8 / 3.0).abs() < 1e-12);
        assert!(token_macro_f1(&g, &p[..1]).is_err());
    }

    #[test]
    fn fixture_shape() {
        let m = table1();
        assert_eq!(m.n(), 13);
        assert_eq!(m.models, names(&["MarIA", "BERTIN", "BETO", "RigoBERTa"]));
        assert_eq!(m.cells[9][1], None);
        assert_eq!(m.cells[10][1], None);
        assert_eq!(m.cells.iter().flatten().filter(|c| c.is_none()).count(), 2);
    }

    #[test]
    fn sqac_imputation() {
        let m = impute_missing(&table1(), 0.001).unwrap();
        let v = m.cells[9][1].unwrap();
        assert!((v - 0.761).abs() < 1e-12);
        assert_eq!(m.cells[9][0], Some(0.866));
    }

    #[test]
    fn imputation_identity_and_errors() {
        let m = ScoreMatrix::new(names(&["a", "b"]), names(&["x", "y"]), vec![vec![Some(0.1), Some(0.2)]; 2]).unwrap();
        assert_eq!(impute_missing(&m, 0.001).unwrap(), m);
        let three = ScoreMatrix::new(
            names(&["a", "b"]),
            names(&["x", "y", "z", "w"]),
            vec![vec![Some(0.5), None, Some(0.7), None], vec![Some(0.1), Some(0.2), Some(0.3), Some(0.4)]],
        )
        .unwrap();
        let f = impute_missing(&three, 0.01).unwrap();
        assert_eq!(f.cells[0][1], f.cells[0][3]);
        assert!(matches!(
            ScoreMatrix::new(names(&["a", "b"]), names(&["x", "y"]), vec![vec![None, None], vec![Some(0.1), Some(0.2)]]),
            Err(Error::EmptyRow(_))
        ));
        assert!(matches!(average_ranks(&three, true), Err(Error::MissingCells(_))));
    }

    #[test]
    fn table1_average_ranks() {
        let m = impute_missing(&table1(), DEFAULT_EPSILON).unwrap();
        let r = average_ranks(&m, true).unwrap();
        let expected = [29.5 / 13.0, 46.5 / 13.0, 35.5 / 13.0, 18.5 / 13.0];
        for (a, b) in r.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in r.iter().zip([2.27, 3.58, 2.73, 1.42]) {
            assert!((a - b).abs() <= 0.005);
        }
    }

    #[test]
    fn mldoc_tie_is_fractional() {
        let m = table1();
        let row: Vec<f64> = m.cells[6].iter().map(|c| c.unwrap()).collect();
        assert_eq!(rank_row(&row, true), vec![1.5, 4.0, 3.0, 1.5]);
        assert_eq!(rank_row(&[0.9, 0.8], true), vec![1.0, 2.0]);
        assert_eq!(rank_row(&[0.9, 0.8], false), vec![2.0, 1.0]);
    }

    #[test]
    fn any_epsilon_same_ranks() {
        let base = average_ranks(&impute_missing(&table1(), 0.001).unwrap(), true).unwrap();
        for eps in [1e-9, 0.01, 0.3, 5.0] {
            assert_eq!(average_ranks(&impute_missing(&table1(), eps).unwrap(), true).unwrap(), base);
        }
    }

    #[test]
    fn critical_distance_value() {
        let cd = critical_distance(4, 13, 0.05).unwrap();
        assert!((cd - 2.569 * (20.0f64 / 78.0).sqrt()).abs() < 1e-12);
        assert!((cd - 1.301).abs() < 1e-3);
        assert!(matches!(q_alpha(11, 0.05), Err(Error::QTableRange { .. })));
        assert!(matches!(q_alpha(4, 0.01), Err(Error::QTableRange { .. })));
        assert!(critical_distance(4, 1, 0.05).is_err());
    }

    #[test]
    fn table1_nemenyi() {
        let rep = compare_models(&table1(), DEFAULT_EPSILON, 0.05).unwrap();
        let sig = |a, b| rep.is_significant(a, b).unwrap();
        assert!(sig("RigoBERTa", "BETO"));
        assert!(sig("RigoBERTa", "BERTIN"));
        assert!(!sig("RigoBERTa", "MarIA"));
        assert!(!sig("MarIA", "BETO"));
        assert!(!sig("BETO", "BERTIN"));
        // 17/13 against 1.3009: the near-critical pair comes out significant
        assert!(sig("MarIA", "BERTIN"));
        assert_eq!(
            rep.groups,
            vec![names(&["RigoBERTa", "MarIA"]), names(&["MarIA", "BETO"]), names(&["BETO", "BERTIN"])]
        );
    }

    #[test]
    fn groups_edge_cases() {
        let rep = nemenyi(&names(&["a", "b"]), &[1.0, 2.0], 2, 0.05).unwrap();
        assert!(rep.cd > 1.0);
        assert_eq!(rep.groups, vec![names(&["a", "b"])]);
        let rep = nemenyi(&names(&["a", "b", "c"]), &[2.0, 2.0, 2.0], 10, 0.05).unwrap();
        assert!(rep.significant.iter().flatten().all(|s| !s));
        assert_eq!(rep.groups.len(), 1);
        let rep = nemenyi(&names(&["a", "b", "c"]), &[1.0, 2.0, 3.0], 1000, 0.05).unwrap();
        assert!(rep.groups.is_empty());
    }

    #[test]
    fn friedman_by_hand() {
        let m = ScoreMatrix::new(names(&["r1", "r2", "r3"]), names(&["a", "b"]), vec![vec![Some(0.9), Some(0.1)]; 3]).unwrap();
        // 12*3/(2*3) * ((1 + 4) - 2*9/4) = 3
        assert!((friedman_statistic(&m).unwrap() - 3.0).abs() < 1e-12);
        let flat = ScoreMatrix::new(names(&["r1", "r2"]), names(&["a", "b", "c"]), vec![vec![Some(0.5); 3]; 2]).unwrap();
        assert_eq!(friedman_statistic(&flat).unwrap(), 0.0);
        let t = impute_missing(&table1(), DEFAULT_EPSILON).unwrap();
        let sums: f64 = [29.5f64, 46.5, 35.5, 18.5].iter().map(|r| r * r).sum();
        let spreadsheet = 12.0 / (13.0 * 4.0 * 5.0) * sums - 3.0 * 13.0 * 5.0;
        assert!((friedman_statistic(&t).unwrap() - spreadsheet).abs() < 1e-9);
    }

    #[test]
    fn diagram_output_deterministic() {
        let rep = compare_models(&table1(), DEFAULT_EPSILON, 0.05).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.svg");
        let b = dir.path().join("b.svg");
        render_cd_diagram(&rep, &a).unwrap();
        render_cd_diagram(&rep, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let csv = fs::read_to_string(dir.path().join("a.csv")).unwrap();
        let mut rdr = csv::Reader::from_reader(csv.as_bytes());
        for rec in rdr.records() {
            let rec = rec.unwrap();
            let r: f64 = rec[1].parse().unwrap();
            assert!((r - rep.rank_of(&rec[0]).unwrap()).abs() < 1e-6);
        }
        let svg = fs::read_to_string(&a).unwrap();
        assert_eq!(svg.matches("stroke-width=\"4\"").count(), rep.groups.len());
        assert!(svg.contains("RigoBERTa (1.42)"));
    }

    #[test]
    fn table2_compares() {
        let m = ScoreMatrix::from_csv(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/table2.csv")).unwrap();
        let rep = compare_models(&m, DEFAULT_EPSILON, 0.05).unwrap();
        assert_eq!(rep.rank_of("RigoBERTa"), Some(1.0));
    }

    fn matrix_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
        (2usize..6, 2usize..8).prop_flat_map(|(k, n)| (Just(k), Just(n), prop::collection::vec(0u8..6, k * n)))
            .prop_map(|(k, n, v)| (k, n, v.into_iter().map(|x| x as f64 / 10.0).collect()))
    }

    fn build(k: usize, n: usize, v: &[f64]) -> ScoreMatrix {
        let models = (0..k).map(|i| format!("m{i}")).collect();
        let datasets = (0..n).map(|i| format!("d{i}")).collect();
        let cells = v.chunks(k).map(|r| r.iter().map(|&x| Some(x)).collect()).collect();
        ScoreMatrix::new(datasets, models, cells).unwrap()
    }

    proptest! {
        #[test]
        fn rank_sums_conserved((k, n, v) in matrix_strategy()) {
            for row in v.chunks(k) {
                let s: f64 = rank_row(row, true).iter().sum();
                prop_assert_eq!(s, (k * (k + 1)) as f64 / 2.0);
            }
            let m = build(k, n, &v);
            let r = average_ranks(&m, true).unwrap();
            prop_assert!(r.iter().all(|x| (1.0..=k as f64).contains(x)));
        }

        #[test]
        fn monotone_transform_keeps_report((k, n, v) in matrix_strategy()) {
            let m = build(k, n, &v);
            let t: Vec<f64> = v.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
            let mt = build(k, n, &t);
            let a = compare_models(&m, 0.001, 0.05).unwrap();
            let b = compare_models(&mt, 0.001, 0.05).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn imputed_cells_rank_below_present((k, n, v) in matrix_strategy(), hole in 0usize..64) {
            prop_assume!(k >= 3);
            let mut m = build(k, n, &v);
            let (r, c) = ((hole / k) % n, hole % k);
            m.cells[r][c] = None;
            let f = impute_missing(&m, 0.001).unwrap();
            let filled = f.cells[r][c].unwrap();
            prop_assert!(m.cells[r].iter().flatten().all(|&x| filled < x));
        }

        #[test]
        fn significance_symmetric(ranks in prop::collection::vec(1.0f64..5.0, 2..8), n in 2usize..40) {
            let models: Vec<String> = (0..ranks.len()).map(|i| format!("m{i}")).collect();
            let rep = nemenyi(&models, &ranks, n, 0.10).unwrap();
            for i in 0..ranks.len() {
                prop_assert!(!rep.significant[i][i]);
                for j in 0..ranks.len() {
                    prop_assert_eq!(rep.significant[i][j], rep.significant[j][i]);
                }
            }
        }
    }
}
