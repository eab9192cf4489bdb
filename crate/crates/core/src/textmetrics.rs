//! Token-level metrics: corpus BLEU-2, ROUGE-1 F1 and micro-averaged F1.

use std::collections::{BTreeSet, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no candidates to score")]
    Empty,
    #[error("length mismatch: {0} candidates/predictions vs {1} references/golds")]
    LengthMismatch(usize, usize),
}

/// Corpus-level BLEU-2 with its components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// Score in `[0, 100]`.
    pub bleu2: f64,
    /// Modified unigram and bigram precisions.
    pub precisions: [f64; 2],
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BleuMode {
    /// Clipped counts summed over the corpus before dividing.
    #[default]
    Corpus,
    /// Per-pair BLEU-2 with 1e-9 smoothing on zero counts, averaged.
    Sentence,
}

const SMOOTH: f64 = 1e-9;

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.iter().map(|s| s.as_ref()).collect()).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped matches and total candidate n-grams for one pair.
fn clipped<S: AsRef<str>>(cand: &[S], refr: &[S], n: usize) -> (usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(refr, n);
    let matched = c.iter().map(|(g, k)| (*k).min(r.get(g).copied().unwrap_or(0))).sum();
    (matched, cand.len().saturating_sub(n - 1))
}

fn combine(p: [f64; 2], bp: f64) -> f64 {
    if p.iter().any(|v| *v <= 0.0) {
        return 0.0;
    }
    100.0 * bp * (0.5 * (p[0].ln() + p[1].ln())).exp()
}

fn brevity(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

/// BLEU-2 over aligned candidate/reference token lists.
///
/// Tokens are expected to be lowercased already (the corpus tokenizer does so).
pub fn bleu2<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>]) -> Result<BleuReport, MetricError> {
    bleu2_with_mode(candidates, references, BleuMode::Corpus)
}

pub fn bleu2_with_mode<S: AsRef<str>>(
    candidates: &[Vec<S>],
    references: &[Vec<S>],
    mode: BleuMode,
) -> Result<BleuReport, MetricError> {
    if candidates.is_empty() {
        return Err(MetricError::Empty);
    }
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch(candidates.len(), references.len()));
    }
    let c_len: usize = candidates.iter().map(Vec::len).sum();
    let r_len: usize = references.iter().map(Vec::len).sum();
    match mode {
        BleuMode::Corpus => {
            let mut num = [0usize; 2];
            let mut den = [0usize; 2];
            for (c, r) in candidates.iter().zip(references) {
                for n in 1..=2 {
                    let (m, t) = clipped(c, r, n);
                    num[n - 1] += m;
                    den[n - 1] += t;
                }
            }
            let precisions = [0, 1].map(|i| if den[i] == 0 { 0.0 } else { num[i] as f64 / den[i] as f64 });
            let bp = brevity(c_len, r_len);
            Ok(BleuReport {
                bleu2: combine(precisions, bp),
                precisions,
                brevity_penalty: bp,
                candidate_len: c_len,
                reference_len: r_len,
            })
        }
        BleuMode::Sentence => {
            let mut total = 0.0;
            let mut psum = [0.0; 2];
            for (c, r) in candidates.iter().zip(references) {
                let mut p = [0.0; 2];
                for n in 1..=2 {
                    let (m, t) = clipped(c, r, n);
                    p[n - 1] = if m == 0 || t == 0 { SMOOTH } else { m as f64 / t as f64 };
                }
                psum[0] += p[0];
                psum[1] += p[1];
                total += combine(p, brevity(c.len(), r.len()));
            }
            let k = candidates.len() as f64;
            Ok(BleuReport {
                bleu2: total / k,
                precisions: [psum[0] / k, psum[1] / k],
                brevity_penalty: brevity(c_len, r_len),
                candidate_len: c_len,
                reference_len: r_len,
            })
        }
    }
}

/// Unigram-overlap F1 per pair, averaged over pairs, in `[0, 1]`.
pub fn rouge1_f1<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>]) -> Result<f64, MetricError> {
    if candidates.is_empty() {
        return Err(MetricError::Empty);
    }
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch(candidates.len(), references.len()));
    }
    let total: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| {
            let (overlap, _) = clipped(c, r, 1);
            if overlap == 0 {
                return 0.0;
            }
            let p = overlap as f64 / c.len() as f64;
            let rc = overlap as f64 / r.len() as f64;
            2.0 * p * rc / (p + rc)
        })
        .sum();
    Ok(total / candidates.len() as f64)
}

/// Micro-averaged precision/recall/F1 with the pooled confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct F1Report {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl F1Report {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        F1Report { precision, recall, f1, tp, fp, fn_ }
    }
}

/// Micro F1 for single-label prediction; equals accuracy.
pub fn micro_f1_single<L: PartialEq>(predictions: &[L], golds: &[L]) -> Result<F1Report, MetricError> {
    if predictions.len() != golds.len() {
        return Err(MetricError::LengthMismatch(predictions.len(), golds.len()));
    }
    let tp = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    let wrong = predictions.len() - tp;
    Ok(F1Report::from_counts(tp, wrong, wrong))
}

/// Micro F1 pooled over every (example, label) decision of set-valued labels.
pub fn micro_f1_sets<L: Ord + Hash>(
    predictions: &[BTreeSet<L>],
    golds: &[BTreeSet<L>],
) -> Result<F1Report, MetricError> {
    if predictions.len() != golds.len() {
        return Err(MetricError::LengthMismatch(predictions.len(), golds.len()));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, g) in predictions.iter().zip(golds) {
        let hit = p.intersection(g).count();
        tp += hit;
        fp += p.len() - hit;
        fn_ += g.len() - hit;
    }
    Ok(F1Report::from_counts(tp, fp, fn_))
}
