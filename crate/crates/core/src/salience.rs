//! Cross-document salience: every sentence is scored by ROUGE against all
//! other sentences of its cluster, and each document's top sentence is picked.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::DocumentCluster;
use crate::metrics::{lcs_len, RougeScore, RougeVariant};
use crate::textproc::{ngrams, NgramCounts, TokenNorm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSentence {
    pub doc_index: usize,
    pub sent_index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SalienceError {
    #[error("no scored sentences for document {0}")]
    NotFound(usize),
}

/// The cluster's sentences as one interned token sequence.
struct ClusterTokens {
    tokens: Vec<u32>,
    /// `(doc_index, sent_index, start, end)` into `tokens`, in cluster order.
    spans: Vec<(usize, usize, usize, usize)>,
}

impl ClusterTokens {
    fn new(cluster: &DocumentCluster, norm: TokenNorm) -> Self {
        let mut vocab: HashMap<String, u32> = HashMap::new();
        let mut tokens = Vec::new();
        let mut spans = Vec::with_capacity(cluster.sentence_count());
        for (d, doc) in cluster.documents.iter().enumerate() {
            for (s, sentence) in doc.sentences.iter().enumerate() {
                let start = tokens.len();
                for t in norm.apply(&sentence.text) {
                    let next = vocab.len() as u32;
                    tokens.push(*vocab.entry(t).or_insert(next));
                }
                spans.push((d, s, start, tokens.len()));
            }
        }
        Self { tokens, spans }
    }
}

/// N-gram ROUGE of `tokens[start..end]` against the sequence with that range
/// removed. Instead of recounting the whole pool, start from the counts of
/// the full sequence, drop every n-gram touching the range and add the
/// n-grams that bridge the gap it leaves.
fn pool_rouge_n(full: &[u32], full_counts: &NgramCounts<'_, u32>, start: usize, end: usize, n: usize) -> RougeScore {
    let candidate = &full[start..end];
    let lo = start.saturating_sub(n - 1);
    let hi = (end + n - 1).min(full.len());
    let touching = ngrams(&full[lo..hi], n).expect("order is positive");
    let bridge_tokens: Vec<u32> = full[lo..start].iter().chain(&full[end..hi]).copied().collect();
    let bridging = ngrams(&bridge_tokens, n).expect("order is positive");

    let cand_counts = ngrams(candidate, n).expect("order is positive");
    let mut overlap = 0;
    for (g, &c) in &cand_counts {
        let in_pool = full_counts.get(g).copied().unwrap_or(0) + bridging.get(g).copied().unwrap_or(0)
            - touching.get(g).copied().unwrap_or(0);
        overlap += c.min(in_pool);
    }
    let pool_len = full.len() - candidate.len();
    RougeScore::from_counts(overlap, candidate.len().saturating_sub(n - 1), pool_len.saturating_sub(n - 1))
}

fn pool_rouge_l(full: &[u32], start: usize, end: usize) -> RougeScore {
    let candidate = &full[start..end];
    let pool: Vec<u32> = full[..start].iter().chain(&full[end..]).copied().collect();
    if candidate.is_empty() || pool.is_empty() {
        return RougeScore::default();
    }
    RougeScore::from_counts(lcs_len(candidate, &pool), candidate.len(), pool.len())
}

/// Score every sentence of the cluster against all of its other sentences.
///
/// Output order is document order, then sentence order.
pub fn cd_gsg_scores(cluster: &DocumentCluster, variant: RougeVariant, norm: TokenNorm) -> Vec<ScoredSentence> {
    if cluster.sentence_count() == 0 {
        log::debug!("cluster `{}` has no sentences to score", cluster.cluster_id);
        return Vec::new();
    }
    let ct = ClusterTokens::new(cluster, norm);
    let full = &ct.tokens;
    let uni = matches!(variant, RougeVariant::R1F1 | RougeVariant::MeanF1).then(|| ngrams(full, 1).unwrap());
    let bi = matches!(variant, RougeVariant::R2F1 | RougeVariant::MeanF1).then(|| ngrams(full, 2).unwrap());

    ct.spans
        .iter()
        .map(|&(doc_index, sent_index, start, end)| {
            let r1 = || pool_rouge_n(full, uni.as_ref().unwrap(), start, end, 1).f1;
            let r2 = || pool_rouge_n(full, bi.as_ref().unwrap(), start, end, 2).f1;
            let rl = || pool_rouge_l(full, start, end).f1;
            let score = match variant {
                RougeVariant::R1F1 => r1(),
                RougeVariant::R2F1 => r2(),
                RougeVariant::RlF1 => rl(),
                RougeVariant::MeanF1 => (r1() + r2() + rl()) / 3.0,
            };
            ScoredSentence { doc_index, sent_index, score }
        })
        .collect()
}

/// Scores supplied with the input, if every document carries them.
pub fn precomputed_scores(cluster: &DocumentCluster) -> Option<Vec<ScoredSentence>> {
    let mut out = Vec::with_capacity(cluster.sentence_count());
    for (doc_index, doc) in cluster.documents.iter().enumerate() {
        let scores = doc.precomputed_scores.as_ref()?;
        out.extend(
            scores.iter().enumerate().map(|(sent_index, &score)| ScoredSentence { doc_index, sent_index, score }),
        );
    }
    Some(out)
}

/// The highest-scoring sentence of one document; ties go to the earliest.
pub fn select_salient(scores: &[ScoredSentence], doc_index: usize) -> Result<ScoredSentence, SalienceError> {
    scores
        .iter()
        .filter(|s| s.doc_index == doc_index)
        .fold(None, |best: Option<&ScoredSentence>, s| match best {
            Some(b) if b.score > s.score || (b.score == s.score && b.sent_index <= s.sent_index) => Some(b),
            _ => Some(s),
        })
        .copied()
        .ok_or(SalienceError::NotFound(doc_index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::textproc::Segmenter;

    fn cluster(docs: &[&[&str]]) -> DocumentCluster {
        DocumentCluster {
            cluster_id: "t".into(),
            documents: docs
                .iter()
                .enumerate()
                .map(|(i, sents)| Document::from_sentences(format!("d{i}"), sents))
                .collect(),
        }
    }

    #[test]
    fn single_sentence_scores_zero() {
        let c = cluster(&[&["Only one sentence here."]]);
        let s = cd_gsg_scores(&c, RougeVariant::R1F1, TokenNorm::scoring());
        assert_eq!(s, [ScoredSentence { doc_index: 0, sent_index: 0, score: 0.0 }]);
    }

    #[test]
    fn empty_cluster_yields_nothing() {
        let c = DocumentCluster {
            cluster_id: "e".into(),
            documents: vec![Document::new("a", "   ", &Segmenter::default())],
        };
        assert!(cd_gsg_scores(&c, RougeVariant::R1F1, TokenNorm::scoring()).is_empty());
    }

    #[test]
    fn hand_computed_two_doc_fixture() {
        // Tokens: d0 = [a b] [c d], d1 = [a c] [e].
        // s00 [a b] vs pool [c d a c e]: overlap 1, p=1/2, r=1/5 -> f1 = 2/7
        // s01 [c d] vs pool [a b a c e]: overlap 1, p=1/2, r=1/5 -> 2/7
        // s10 [a c] vs pool [a b c d e]: overlap 2, p=1, r=2/5 -> 4/7
        // s11 [e]   vs pool [a b c d a c]: overlap 0 -> 0
        let c = cluster(&[&["a b", "c d"], &["a c", "e"]]);
        let s = cd_gsg_scores(&c, RougeVariant::R1F1, TokenNorm::scoring());
        let expect = [2.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0, 0.0];
        for (got, want) in s.iter().zip(expect) {
            assert!((got.score - want).abs() < 1e-12, "{got:?} vs {want}");
        }
        assert_eq!(select_salient(&s, 0).unwrap().sent_index, 0);
        assert_eq!(select_salient(&s, 1).unwrap().sent_index, 0);
    }

    #[test]
    fn verbatim_duplicate_is_most_salient() {
        let shared = "The storm closed every road in the county.";
        let c = cluster(&[
            &["Officials met on Monday.", shared, "Schools stayed open."],
            &["Residents were warned early.", shared],
        ]);
        let s = cd_gsg_scores(&c, RougeVariant::R1F1, TokenNorm::scoring());
        assert_eq!(select_salient(&s, 0).unwrap().sent_index, 1);
        assert_eq!(select_salient(&s, 1).unwrap().sent_index, 1);
    }

    #[test]
    fn selection_rules() {
        let s = |sent_index, score| ScoredSentence { doc_index: 0, sent_index, score };
        assert_eq!(select_salient(&[s(0, 0.2), s(1, 0.7)], 0).unwrap(), s(1, 0.7));
        assert_eq!(select_salient(&[s(0, 0.5), s(2, 0.5)], 0).unwrap(), s(0, 0.5));
        assert_eq!(select_salient(&[s(2, 0.5), s(0, 0.5)], 0).unwrap(), s(0, 0.5));
        assert_eq!(select_salient(&[s(0, 0.5)], 3), Err(SalienceError::NotFound(3)));
    }

    #[test]
    fn precomputed_requires_every_document() {
        let mut c = cluster(&[&["a b", "c d"], &["e f"]]);
        assert!(precomputed_scores(&c).is_none());
        c.documents[0].precomputed_scores = Some(vec![0.1, 0.3]);
        assert!(precomputed_scores(&c).is_none());
        c.documents[1].precomputed_scores = Some(vec![0.2]);
        let s = precomputed_scores(&c).unwrap();
        assert_eq!(select_salient(&s, 0).unwrap().sent_index, 1);
    }
}
