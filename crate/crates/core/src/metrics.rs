//! Sequence metrics on a 0–100 scale: corpus BLEU, sequence-item accuracy,
//! ROUGE-L and frame-level mean average precision.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::numkit::{exp, ln};

/// One evaluated metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric: String,
    /// Value in `[0, 100]`.
    pub value: f64,
    /// Number of evaluated pairs.
    pub count: usize,
}

impl MetricReport {
    pub fn new(metric: impl Into<String>, value: f64, count: usize) -> Self {
        Self { metric: metric.into(), value, count }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BleuMode {
    /// Match counts and lengths summed over the corpus.
    #[default]
    Corpus,
    /// Mean of per-pair sentence BLEU.
    SentenceAverage,
}

fn ngram_counts<T: Ord + Clone>(seq: &[T], n: usize) -> BTreeMap<&[T], usize> {
    let mut counts = BTreeMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and candidate n-gram total for one pair.
fn clipped<T: Ord + Clone>(cand: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let matched = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    (matched, cand.len().saturating_sub(n - 1))
}

fn combine(matches: &[usize], totals: &[usize], cand_len: usize, ref_len: usize) -> f64 {
    if matches.iter().zip(totals).any(|(&m, &t)| m == 0 || t == 0) {
        return 0.0;
    }
    let n = matches.len() as f64;
    let log_mean: f64 = matches
        .iter()
        .zip(totals)
        .map(|(&m, &t)| ln(m as f64 / t as f64) / n)
        .sum();
    let bp = if cand_len > ref_len {
        1.0
    } else {
        exp(1.0 - ref_len as f64 / cand_len as f64)
    };
    100.0 * bp * exp(log_mean)
}

fn check_corpus<T>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<()> {
    if candidates.is_empty() || candidates.len() != references.len() {
        return Err(invalid!(
            "need matching non-empty corpora, got {} candidates and {} references",
            candidates.len(),
            references.len()
        ));
    }
    Ok(())
}

/// Corpus BLEU up to order `n` (uniform weights, brevity penalty).
pub fn bleu<T: Ord + Clone>(candidates: &[Vec<T>], references: &[Vec<T>], n: usize) -> Result<MetricReport> {
    bleu_with_mode(candidates, references, n, BleuMode::Corpus)
}

pub fn bleu_with_mode<T: Ord + Clone>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
    n: usize,
    mode: BleuMode,
) -> Result<MetricReport> {
    check_corpus(candidates, references)?;
    if n == 0 {
        return Err(invalid!("BLEU order must be at least 1"));
    }
    let name = alloc::format!("BLEU-{n}");
    let pairs = candidates.iter().zip(references);
    let value = match mode {
        BleuMode::Corpus => {
            let mut matches = vec![0; n];
            let mut totals = vec![0; n];
            let (mut cand_len, mut ref_len) = (0, 0);
            for (c, r) in pairs {
                for k in 0..n {
                    let (m, t) = clipped(c, r, k + 1);
                    matches[k] += m;
                    totals[k] += t;
                }
                cand_len += c.len();
                ref_len += r.len();
            }
            combine(&matches, &totals, cand_len, ref_len)
        }
        BleuMode::SentenceAverage => {
            let sum: f64 = pairs
                .map(|(c, r)| {
                    let (m, t): (Vec<usize>, Vec<usize>) = (1..=n).map(|k| clipped(c, r, k)).unzip();
                    combine(&m, &t, c.len(), r.len())
                })
                .sum();
            sum / candidates.len() as f64
        }
    };
    Ok(MetricReport::new(name, value, candidates.len()))
}

/// Positions where prediction and ground truth agree, over the longer
/// length, as a percentage. Two empty sequences score 100.
pub fn seq_item_accuracy<T: PartialEq>(predicted: &[T], truth: &[T]) -> f64 {
    let longest = predicted.len().max(truth.len());
    if longest == 0 {
        return 100.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    100.0 * hits as f64 / longest as f64
}

/// Mean [`seq_item_accuracy`] over a corpus.
pub fn mean_accuracy<T: PartialEq>(predicted: &[Vec<T>], truth: &[Vec<T>]) -> Result<MetricReport> {
    check_corpus(predicted, truth)?;
    let sum: f64 = predicted.iter().zip(truth).map(|(p, t)| seq_item_accuracy(p, t)).sum();
    Ok(MetricReport::new("accuracy", sum / predicted.len() as f64, predicted.len()))
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

/// LCS-based F-measure `(1+β²)PR / (R + β²P)` with `β = 1.2`.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(invalid!("ROUGE-L needs a non-empty reference"));
    }
    let l = lcs_len(candidate, reference);
    if l == 0 {
        return Ok(0.0);
    }
    let p = l as f64 / candidate.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    Ok(100.0 * (1.0 + b2) * p * r / (r + b2 * p))
}

/// Mean ROUGE-L over a corpus.
pub fn mean_rouge_l<T: PartialEq>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<MetricReport> {
    check_corpus(candidates, references)?;
    let mut sum = 0.0;
    for (c, r) in candidates.iter().zip(references) {
        sum += rouge_l(c, r)?;
    }
    Ok(MetricReport::new("ROUGE-L", sum / candidates.len() as f64, candidates.len()))
}

/// Average precision of `scores` ranked descending against `labels`.
/// Equal scores are ordered negatives first, so ties never help.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(invalid!("{} scores for {} labels", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(invalid!("scores contain NaN"));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(invalid!("average precision needs at least one positive"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(labels[a].cmp(&labels[b])));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Mean over classes (columns) of frame-ranking average precision, as a
/// percentage. `scores` and `labels` are frames × classes; classes without a
/// positive frame are skipped.
pub fn frame_map(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(invalid!("{} score rows for {} label rows", scores.len(), labels.len()));
    }
    let classes = scores.first().map_or(0, Vec::len);
    if scores.iter().any(|r| r.len() != classes) || labels.iter().any(|r| r.len() != classes) {
        return Err(invalid!("score and label grids must share one rectangular shape"));
    }
    let mut total = 0.0;
    let mut scored = 0usize;
    for c in 0..classes {
        let col_labels: Vec<bool> = labels.iter().map(|r| r[c]).collect();
        if !col_labels.contains(&true) {
            continue;
        }
        let col_scores: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        total += average_precision(&col_scores, &col_labels)?;
        scored += 1;
    }
    if scored == 0 {
        return Err(invalid!("frame mAP needs at least one positive label"));
    }
    Ok(100.0 * total / scored as f64)
}
