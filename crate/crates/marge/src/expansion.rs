//! LexRank-based query narrative expansion for short-query benchmarks.
//!
//! Centrality is the stationary distribution of a damped random walk on
//! the sentence cosine-similarity graph: edges below the threshold are
//! zeroed (self-similarity included), rows are normalized to a
//! stochastic matrix (isolated rows become uniform), and power iteration
//! runs until the L-infinity change drops below epsilon.

use std::collections::HashMap;

use crate::exec::map_collect;
use crate::text::{cosine, tokenize, vectorize_tfidf, SparseVector, TokenSeq};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentralityConfig {
    pub similarity_threshold: f64,
    pub damping: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl Default for CentralityConfig {
    fn default() -> Self {
        CentralityConfig {
            similarity_threshold: 0.1,
            damping: 0.85,
            epsilon: 1e-6,
            max_iterations: 100,
        }
    }
}

/// idf over the input sentences themselves: ln(N / df).
fn self_corpus_idf(sentences: &[TokenSeq]) -> HashMap<String, f64> {
    let n = sentences.len() as f64;
    let mut df: HashMap<String, usize> = HashMap::new();
    for s in sentences {
        let mut seen: Vec<&str> = s.words().collect();
        seen.sort_unstable();
        seen.dedup();
        for w in seen {
            *df.entry(w.to_string()).or_insert(0) += 1;
        }
    }
    df.into_iter()
        .map(|(w, d)| (w, (n / d as f64).ln()))
        .collect()
}

/// Row-stochastic transition matrix over thresholded cosine similarities.
pub(crate) fn transition_matrix(sentences: &[TokenSeq], cfg: &CentralityConfig) -> Vec<Vec<f64>> {
    let n = sentences.len();
    let idf = self_corpus_idf(sentences);
    let vectors: Vec<SparseVector> = map_collect(sentences, |s| vectorize_tfidf(s, &idf));
    let rows: Vec<Vec<f64>> = map_collect(&(0..n).collect::<Vec<_>>(), |&i| {
        let mut row = vec![0.0; n];
        for j in 0..n {
            let sim = cosine(&vectors[i], &vectors[j]).expect("same dim");
            if sim >= cfg.similarity_threshold {
                row[j] = sim;
            }
        }
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            for v in row.iter_mut() {
                *v /= sum;
            }
        } else {
            for v in row.iter_mut() {
                *v = 1.0 / n as f64;
            }
        }
        row
    });
    rows
}

/// Centrality scores, non-negative and summing to 1.
pub fn lexrank_scores(sentences: &[TokenSeq], cfg: &CentralityConfig) -> Vec<f64> {
    let n = sentences.len();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![1.0];
    }
    let m = transition_matrix(sentences, cfg);
    let mut p = vec![1.0 / n as f64; n];
    let teleport = (1.0 - cfg.damping) / n as f64;
    for _ in 0..cfg.max_iterations {
        let mut next = vec![teleport; n];
        for (j, pj) in p.iter().enumerate() {
            for i in 0..n {
                next[i] += cfg.damping * m[j][i] * pj;
            }
        }
        let delta = p
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        p = next;
        if delta < cfg.epsilon {
            break;
        }
    }
    p
}

/// Append the most central cluster sentences to the query under a word
/// budget. Sentences that do not fit are skipped rather than stopping
/// the scan; the output always starts with the verbatim original query.
pub fn expand_query(
    query: &str,
    cluster_sentences: &[String],
    word_budget: usize,
    cfg: &CentralityConfig,
) -> String {
    let tokenized: Vec<TokenSeq> = map_collect(cluster_sentences, |s| tokenize(s));
    let scores = lexrank_scores(&tokenized, cfg);
    let mut order: Vec<usize> = (0..cluster_sentences.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let mut appended = Vec::new();
    let mut used = 0usize;
    for i in order {
        let wc = tokenized[i].word_count;
        if wc == 0 {
            continue;
        }
        if used + wc <= word_budget {
            appended.push(cluster_sentences[i].as_str());
            used += wc;
        }
    }
    if appended.is_empty() {
        query.to_string()
    } else {
        format!("{} {}", query, appended.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seqs(texts: &[&str]) -> Vec<TokenSeq> {
        texts.iter().map(|t| tokenize(t)).collect()
    }

    #[test]
    fn identical_sentences_share_centrality() {
        let sentences = seqs(&["the same sentence", "the same sentence", "the same sentence"]);
        let scores = lexrank_scores(&sentences, &CentralityConfig::default());
        for s in &scores {
            assert!((s - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_sentence_scores_one() {
        let scores = lexrank_scores(&seqs(&["only one"]), &CentralityConfig::default());
        assert_eq!(scores, vec![1.0]);
    }

    #[test]
    fn scores_sum_to_one() {
        let sentences = seqs(&[
            "storms battered the northern coast",
            "the coast saw heavy storms",
            "a chess match ended in a draw",
            "rescue crews reached the coast",
        ]);
        let scores = lexrank_scores(&sentences, &CentralityConfig::default());
        let sum: f64 = scores.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(scores.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn matches_dense_power_oracle() {
        let sentences = seqs(&[
            "flood waters rose in the valley",
            "the valley flood forced evacuations",
            "officials opened shelters for evacuees",
            "a new bridge opened downtown",
        ]);
        let cfg = CentralityConfig::default();
        let scores = lexrank_scores(&sentences, &cfg);

        // Oracle: 60 multiplications by the dense damped transition.
        let m = transition_matrix(&sentences, &cfg);
        let n = sentences.len();
        let mut p = vec![1.0 / n as f64; n];
        for _ in 0..60 {
            let mut next = vec![(1.0 - cfg.damping) / n as f64; n];
            for j in 0..n {
                for i in 0..n {
                    next[i] += cfg.damping * m[j][i] * p[j];
                }
            }
            p = next;
        }
        for (a, b) in scores.iter().zip(&p) {
            assert!((a - b).abs() <= 1e-6, "{scores:?} vs {p:?}");
        }
    }

    #[test]
    fn expansion_skips_sentences_that_do_not_fit() {
        // Mutually disjoint sentences: all cross-similarities fall below
        // the threshold, centrality ties, and the tie rule keeps input
        // order. Word counts 10, 8, 4 with budget 15: take the first
        // (10), skip the second (10 + 8 > 15), take the third (10 + 4).
        let s10 = "alpha beta gamma delta epsilon zeta eta theta iota kappa";
        let s8 = "one two three four five six seven eight";
        let s4 = "red green blue amber";
        let cluster: Vec<String> = vec![s10.into(), s8.into(), s4.into()];
        let out = expand_query("q", &cluster, 15, &CentralityConfig::default());
        assert_eq!(out, format!("q {s10} {s4}"));
    }

    #[test]
    fn budget_zero_fits_nothing() {
        let cluster: Vec<String> = vec!["some sentence here".into()];
        let out = expand_query("the query", &cluster, 2, &CentralityConfig::default());
        assert_eq!(out, "the query");
    }

    #[test]
    fn large_budget_appends_everything() {
        let cluster: Vec<String> = vec!["one two".into(), "three four".into()];
        let out = expand_query("q", &cluster, 100, &CentralityConfig::default());
        assert!(out.starts_with("q "));
        assert!(out.contains("one two") && out.contains("three four"));
    }
}
