//! Evaluation math: TER, correlation coefficients, top-k model selection
//! accuracy, post-edit improvement statistics and per-category P/R/F1.
//!
//! Everything here is a pure function.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::ErrorCategory;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("reference is empty")]
    EmptyReference,
    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("`{0}` is constant; coefficient undefined")]
    DegenerateInput(&'static str),
    #[error("empty input")]
    EmptyInput,
    #[error("k = {k} out of range for ranking of length {len}")]
    KOutOfRange { k: usize, len: usize },
    #[error("pre-edit score must be positive, got {0}")]
    NonPositivePreScore(f64),
}

/// Whitespace tokenizer shared by TER and feature extraction.
/// Splits on Unicode whitespace and case-folds; punctuation stays attached.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Unit-cost insert/delete/substitute distance between token sequences.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=a.len()).collect();
    for (j, tb) in b.iter().enumerate() {
        let mut diag = row[0];
        row[0] = j + 1;
        for (i, ta) in a.iter().enumerate() {
            let above = row[i + 1];
            let cost = usize::from(ta != tb);
            row[i + 1] = (diag + cost).min(above + 1).min(row[i] + 1);
            diag = above;
        }
    }
    row[a.len()]
}

/// Shift-free translation error rate: edits to turn `hypothesis` into
/// `reference`, divided by the reference length.
pub fn ter<T: PartialEq>(hypothesis: &[T], reference: &[T]) -> Result<f64, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    Ok(edit_distance(hypothesis, reference) as f64 / reference.len() as f64)
}

/// [`ter`] over raw strings using [`tokenize`].
pub fn ter_text(hypothesis: &str, reference: &str) -> Result<f64, MetricsError> {
    ter(&tokenize(hypothesis), &tokenize(reference))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub spearman: f64,
    pub pearson: f64,
    pub kendall: f64,
    pub n: usize,
}

pub fn correlations(x: &[f64], y: &[f64]) -> Result<CorrelationReport, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::TooFewSamples { needed: 2, got: x.len() });
    }
    if is_constant(x) {
        return Err(MetricsError::DegenerateInput("x"));
    }
    if is_constant(y) {
        return Err(MetricsError::DegenerateInput("y"));
    }
    Ok(CorrelationReport {
        spearman: clamp_unit(pearson_raw(&average_ranks(x), &average_ranks(y))),
        pearson: clamp_unit(pearson_raw(x, y)),
        kendall: clamp_unit(kendall_tau_b(x, y)),
        n: x.len(),
    })
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|a| *a == v[0])
}

fn clamp_unit(r: f64) -> f64 {
    r.clamp(-1.0, 1.0)
}

fn pearson_raw(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    sxy / (sxx * syy).sqrt()
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let mean = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mean;
        }
        start = end;
    }
    ranks
}

fn kendall_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut tied_x, mut tied_y) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].total_cmp(&x[j]) as i64;
            let dy = y[i].total_cmp(&y[j]) as i64;
            match (dx, dy) {
                (0, 0) => {}
                (0, _) => tied_x += 1,
                (_, 0) => tied_y += 1,
                _ if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n_x = (concordant + discordant + tied_y) as f64;
    let n_y = (concordant + discordant + tied_x) as f64;
    (concordant - discordant) as f64 / (n_x * n_y).sqrt()
}

/// Fraction of items whose true best appears in the first `k` entries of the
/// predicted ranking. Every ranking must have at least `k` entries.
pub fn topk_accuracy<S: AsRef<str>, T: AsRef<str>>(
    predicted: &[Vec<S>],
    truth: &[T],
    k: usize,
) -> Result<f64, MetricsError> {
    check_topk_inputs(predicted, truth, k)?;
    if let Some(short) = predicted.iter().find(|r| r.len() < k) {
        return Err(MetricsError::KOutOfRange { k, len: short.len() });
    }
    Ok(topk_hits(predicted, truth, k) as f64 / predicted.len() as f64)
}

/// Like [`topk_accuracy`] but a ranking shorter than `k` is read as a whole,
/// so segments with fewer candidates than `k` still count.
pub fn topk_accuracy_saturating<S: AsRef<str>, T: AsRef<str>>(
    predicted: &[Vec<S>],
    truth: &[T],
    k: usize,
) -> Result<f64, MetricsError> {
    check_topk_inputs(predicted, truth, k)?;
    Ok(topk_hits(predicted, truth, k) as f64 / predicted.len() as f64)
}

fn check_topk_inputs<S, T>(predicted: &[Vec<S>], truth: &[T], k: usize) -> Result<(), MetricsError> {
    if predicted.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if predicted.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(predicted.len(), truth.len()));
    }
    if k == 0 {
        return Err(MetricsError::KOutOfRange { k, len: 0 });
    }
    Ok(())
}

fn topk_hits<S: AsRef<str>, T: AsRef<str>>(predicted: &[Vec<S>], truth: &[T], k: usize) -> usize {
    predicted
        .iter()
        .zip(truth)
        .filter(|(ranking, best)| ranking.iter().take(k).any(|p| p.as_ref() == best.as_ref()))
        .count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementPair<'a> {
    pub pre_score: f64,
    pub post_score: f64,
    pub post_edit_text: &'a str,
    pub target_text: &'a str,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImprovementStats {
    pub mean_improvement_pct: f64,
    pub std_improvement_pct: f64,
    pub mean_abs_char_delta: f64,
    pub n: usize,
}

/// Relative change of the score in percent.
pub fn improvement_pct(pre_score: f64, post_score: f64) -> Result<f64, MetricsError> {
    if pre_score.is_nan() || pre_score <= 0.0 {
        return Err(MetricsError::NonPositivePreScore(pre_score));
    }
    Ok(100.0 * (post_score - pre_score) / pre_score)
}

/// Mean and population standard deviation of per-pair improvement, plus mean
/// absolute character-count delta (Unicode scalar values).
pub fn improvement_stats(pairs: &[ImprovementPair<'_>]) -> Result<ImprovementStats, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = pairs.len() as f64;
    let mut delta_sum = 0.0;
    // Welford keeps the variance stable for large nearly-constant samples.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, p) in pairs.iter().enumerate() {
        let pct = improvement_pct(p.pre_score, p.post_score)?;
        let delta = pct - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (pct - mean);
        let chars_post = p.post_edit_text.chars().count() as f64;
        let chars_target = p.target_text.chars().count() as f64;
        delta_sum += (chars_post - chars_target).abs();
    }
    Ok(ImprovementStats {
        mean_improvement_pct: mean,
        std_improvement_pct: (m2 / n).max(0.0).sqrt(),
        mean_abs_char_delta: delta_sum / n,
        n: pairs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold occurrences (TP + FN).
    pub support: usize,
    /// Predicted occurrences (TP + FP).
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryPrf {
    pub per_category: BTreeMap<ErrorCategory, Prf>,
}

impl CategoryPrf {
    pub fn get(&self, c: ErrorCategory) -> &Prf {
        &self.per_category[&c]
    }
}

/// Multi-label scoring: each (item, category) pair is an independent binary
/// decision. Undefined precision or recall is reported as 0.
pub fn category_prf(
    gold: &[BTreeSet<ErrorCategory>],
    predicted: &[BTreeSet<ErrorCategory>],
) -> Result<CategoryPrf, MetricsError> {
    if gold.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch(gold.len(), predicted.len()));
    }
    let mut per_category = BTreeMap::new();
    for cat in ErrorCategory::ALL {
        let (mut tp, mut fp, mut fal_neg) = (0usize, 0usize, 0usize);
        for (g, p) in gold.iter().zip(predicted) {
            match (g.contains(&cat), p.contains(&cat)) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fal_neg += 1,
                (false, false) => {}
            }
        }
        let precision = ratio_or_zero(tp, tp + fp);
        let recall = ratio_or_zero(tp, tp + fal_neg);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_category.insert(
            cat,
            Prf {
                precision,
                recall,
                f1,
                support: tp + fal_neg,
                predicted: tp + fp,
            },
        );
    }
    Ok(CategoryPrf { per_category })
}

fn ratio_or_zero(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// CSV columns: `coefficient,value,n`.
pub fn write_correlations_csv<W: io::Write>(report: &CorrelationReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["coefficient", "value", "n"])?;
    let n = report.n.to_string();
    for (name, v) in [
        ("spearman", report.spearman),
        ("pearson", report.pearson),
        ("kendall", report.kendall),
    ] {
        w.write_record([name, &v.to_string(), &n])?;
    }
    w.flush()?;
    Ok(())
}

/// CSV columns: `category,precision,recall,f1,support,predicted`, one row per
/// category in declaration order.
pub fn write_category_prf_csv<W: io::Write>(prf: &CategoryPrf, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["category", "precision", "recall", "f1", "support", "predicted"])?;
    for (cat, m) in &prf.per_category {
        w.write_record([
            cat.as_str().to_string(),
            m.precision.to_string(),
            m.recall.to_string(),
            m.f1.to_string(),
            m.support.to_string(),
            m.predicted.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
