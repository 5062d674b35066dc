//! ROUGE-N / ROUGE-L and SQuAD-style exact match / token F1.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::textproc::{ngrams, TokenNorm};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_precision_recall(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self { precision, recall, f1 }
    }

    pub(crate) fn from_counts(overlap: usize, candidate_total: usize, reference_total: usize) -> Self {
        let ratio = |total: usize| if total == 0 { 0.0 } else { overlap as f64 / total as f64 };
        Self::from_precision_recall(ratio(candidate_total), ratio(reference_total))
    }
}

/// Clipped n-gram overlap between candidate and reference.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> Result<RougeScore, MetricsError> {
    let cand = ngrams(candidate, n).map_err(|_| MetricsError::ZeroOrder)?;
    let refs = ngrams(reference, n).map_err(|_| MetricsError::ZeroOrder)?;
    let overlap: usize = cand.iter().map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0))).sum();
    let cand_total = candidate.len().saturating_sub(n - 1);
    let ref_total = reference.len().saturating_sub(n - 1);
    Ok(RougeScore::from_counts(overlap, cand_total, ref_total))
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut prev = vec![0usize; short.len() + 1];
    let mut cur = vec![0usize; short.len() + 1];
    for x in long {
        for (j, y) in short.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// Sequence-level ROUGE-L.
pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> RougeScore {
    if candidate.is_empty() || reference.is_empty() {
        return RougeScore::default();
    }
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RougeVariant {
    #[default]
    R1F1,
    R2F1,
    RlF1,
    /// Mean of the R1, R2 and RL F1 scores.
    MeanF1,
}

impl std::str::FromStr for RougeVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "r1-f1" | "r1" => Ok(Self::R1F1),
            "r2-f1" | "r2" => Ok(Self::R2F1),
            "rl-f1" | "rl" => Ok(Self::RlF1),
            "mean-f1" | "mean" => Ok(Self::MeanF1),
            other => Err(format!("unknown ROUGE variant `{other}`")),
        }
    }
}

impl RougeVariant {
    pub fn score<T: Eq + Hash>(self, candidate: &[T], reference: &[T]) -> f64 {
        let r = |n| rouge_n(candidate, reference, n).expect("order is positive").f1;
        match self {
            Self::R1F1 => r(1),
            Self::R2F1 => r(2),
            Self::RlF1 => rouge_l(candidate, reference).f1,
            Self::MeanF1 => (r(1) + r(2) + rouge_l(candidate, reference).f1) / 3.0,
        }
    }
}

/// Score a sentence against the in-order concatenation of a pool of sentences.
pub fn rouge_against_pool(sentence: &Sentence, pool: &[&Sentence], variant: RougeVariant, norm: TokenNorm) -> f64 {
    if pool.is_empty() {
        log::debug!("empty reference pool for sentence {}; scoring 0", sentence.index);
        return 0.0;
    }
    let candidate = norm.apply(&sentence.text);
    let reference: Vec<String> = pool.iter().flat_map(|s| norm.apply(&s.text)).collect();
    variant.score(&candidate, &reference)
}

/// Lowercase, drop ASCII punctuation and the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lower = text.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QaEvalResult {
    pub exact_match: f64,
    pub f1: f64,
}

pub fn qa_em_f1(prediction: &str, gold: &str) -> QaEvalResult {
    let pred = normalize_answer(prediction);
    let gold = normalize_answer(gold);
    let exact_match = if pred == gold { 1.0 } else { 0.0 };
    let pred_toks: Vec<&str> = pred.split_whitespace().collect();
    let gold_toks: Vec<&str> = gold.split_whitespace().collect();
    let f1 = match (pred_toks.is_empty(), gold_toks.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        (false, false) => {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for t in &gold_toks {
                *counts.entry(t).or_default() += 1;
            }
            let mut common = 0usize;
            for t in &pred_toks {
                if let Some(c) = counts.get_mut(t) {
                    if *c > 0 {
                        *c -= 1;
                        common += 1;
                    }
                }
            }
            RougeScore::from_counts(common, pred_toks.len(), gold_toks.len()).f1
        }
    };
    QaEvalResult { exact_match, f1 }
}

/// Best EM and best F1 over several acceptable gold answers.
pub fn qa_em_f1_multi<S: AsRef<str>>(prediction: &str, golds: &[S]) -> QaEvalResult {
    golds.iter().map(|g| qa_em_f1(prediction, g.as_ref())).fold(QaEvalResult::default(), |acc, r| QaEvalResult {
        exact_match: acc.exact_match.max(r.exact_match),
        f1: acc.f1.max(r.f1),
    })
}

/// Corpus-level mean ROUGE-1/2/L over prediction/reference pairs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeReport {
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub rl: RougeScore,
    pub count: usize,
}

#[derive(Debug, Default)]
pub struct RougeAccumulator {
    sums: [RougeScore; 3],
    count: usize,
}

impl RougeAccumulator {
    pub fn add(&mut self, prediction: &str, reference: &str, norm: TokenNorm) {
        let p = norm.apply(prediction);
        let r = norm.apply(reference);
        let scores = [
            rouge_n(&p, &r, 1).expect("order is positive"),
            rouge_n(&p, &r, 2).expect("order is positive"),
            rouge_l(&p, &r),
        ];
        for (sum, s) in self.sums.iter_mut().zip(scores) {
            sum.precision += s.precision;
            sum.recall += s.recall;
            sum.f1 += s.f1;
        }
        self.count += 1;
    }

    pub fn report(&self) -> RougeReport {
        let n = self.count.max(1) as f64;
        let mean = |s: &RougeScore| RougeScore { precision: s.precision / n, recall: s.recall / n, f1: s.f1 / n };
        RougeReport { r1: mean(&self.sums[0]), r2: mean(&self.sums[1]), rl: mean(&self.sums[2]), count: self.count }
    }
}
