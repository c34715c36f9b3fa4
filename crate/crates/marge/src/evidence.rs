//! Retrieval metrics, budgeted extract assembly with redundancy
//! removal, extract evaluation, and the non-learned baselines.

use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::map_collect;
use crate::ranker::{rank_by_scores, RankedEvidence};
use crate::rouge::{multi_ref_f1, rouge_n, RougeError, RougeScore, Variant};
use crate::supervision::Document;
use crate::text::{cosine, tokenize, truncate_words, vectorize_tfidf, TokenSeq};
use crate::umr::function_words;

#[derive(Debug, Error, PartialEq)]
pub enum EvidenceError {
    #[error("k must be >= 1")]
    InvalidK,
    #[error(transparent)]
    Rouge(#[from] RougeError),
    #[error("unknown baseline method: {0}")]
    UnknownMethod(String),
}

/// Word budget and redundancy threshold for extract assembly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractBudget {
    pub word_budget: usize,
    pub redundancy_threshold: f64,
}

impl Default for ExtractBudget {
    fn default() -> Self {
        ExtractBudget {
            word_budget: 250,
            redundancy_threshold: 0.6,
        }
    }
}

/// ROUGE-2 recall of the concatenated top-k sentences, averaged over
/// references.
pub fn recall_at_k(
    ranked: &RankedEvidence,
    references: &[TokenSeq],
    k: usize,
) -> Result<f64, EvidenceError> {
    if k == 0 {
        return Err(EvidenceError::InvalidK);
    }
    if references.is_empty() {
        return Err(EvidenceError::Rouge(RougeError::NoReferences));
    }
    let top: Vec<TokenSeq> = ranked
        .items
        .iter()
        .take(k)
        .map(|item| tokenize(&item.sentence))
        .collect();
    let candidate = TokenSeq::concat(&top);
    let mean = references
        .iter()
        .map(|r| rouge_n(2, r, &candidate, false).recall)
        .sum::<f64>()
        / references.len() as f64;
    Ok(mean)
}

/// An assembled extract: selected sentences in rank order, the ranked
/// indices they came from, and whether the final sentence was truncated.
#[derive(Debug, Clone, PartialEq)]
pub struct Extract {
    pub sentences: Vec<String>,
    pub indices: Vec<usize>,
    pub truncated_last: bool,
}

impl Extract {
    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }
}

/// Walk the ranking, skip sentences with cosine >= threshold against any
/// selected sentence (full-sentence TF vectors), and stop at the budget,
/// truncating the final sentence at the word boundary. Output word count
/// never exceeds the budget.
pub fn assemble_extract(ranked: &RankedEvidence, budget: &ExtractBudget) -> Extract {
    let empty_idf = HashMap::new();
    let vectors = map_collect(&ranked.items, |item| {
        vectorize_tfidf(&tokenize(&item.sentence), &empty_idf)
    });

    let mut selected_vectors = Vec::new();
    let mut out = Extract {
        sentences: Vec::new(),
        indices: Vec::new(),
        truncated_last: false,
    };
    let mut used = 0usize;

    for (pos, item) in ranked.items.iter().enumerate() {
        let wc = tokenize(&item.sentence).word_count;
        if wc == 0 {
            continue;
        }
        let redundant = selected_vectors
            .iter()
            .any(|v| cosine(v, &vectors[pos]).expect("same dim") >= budget.redundancy_threshold);
        if redundant {
            continue;
        }
        let remaining = budget.word_budget - used;
        if remaining == 0 {
            break;
        }
        if wc <= remaining {
            out.sentences.push(item.sentence.clone());
            out.indices.push(item.index);
            selected_vectors.push(vectors[pos].clone());
            used += wc;
        } else {
            out.sentences
                .push(truncate_words(&item.sentence, remaining).to_string());
            out.indices.push(item.index);
            out.truncated_last = true;
            break;
        }
    }
    out
}

/// F1 ROUGE-1/2/SU4 of an extract against the references.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
pub struct ExtractScores {
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub su4: RougeScore,
}

pub fn evaluate_extract(
    extract_sentences: &[String],
    references: &[TokenSeq],
    stem: bool,
) -> Result<ExtractScores, EvidenceError> {
    let candidate = tokenize(&extract_sentences.join(" "));
    Ok(ExtractScores {
        r1: multi_ref_f1(references, &candidate, Variant::R1, stem)?,
        r2: multi_ref_f1(references, &candidate, Variant::R2, stem)?,
        su4: multi_ref_f1(references, &candidate, Variant::Su4, stem)?,
    })
}

/// Non-learned baseline rankers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    TermFreq,
    Lead,
}

impl FromStr for BaselineMethod {
    type Err = EvidenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_lowercase().as_str() {
            "termfreq" => Ok(BaselineMethod::TermFreq),
            "lead" => Ok(BaselineMethod::Lead),
            other => Err(EvidenceError::UnknownMethod(other.to_string())),
        }
    }
}

/// TermFreq scores each sentence by the sum, over distinct non-stopword
/// query words it shares, of that word's corpus term frequency. Lead
/// returns the last (most recent) document's sentences first, then the
/// rest, preserving input order throughout.
pub fn baseline_rank(method: BaselineMethod, query: &str, documents: &[Document]) -> RankedEvidence {
    let sentences: Vec<String> = documents
        .iter()
        .flat_map(|d| d.sentences.iter().cloned())
        .collect();
    match method {
        BaselineMethod::TermFreq => {
            let tokenized: Vec<TokenSeq> = map_collect(&sentences, |s| tokenize(s));
            let mut corpus_tf: HashMap<&str, usize> = HashMap::new();
            for t in &tokenized {
                for w in t.words() {
                    *corpus_tf.entry(w).or_insert(0) += 1;
                }
            }
            let stop = function_words();
            let mut query_words: Vec<String> = tokenize(query)
                .words()
                .filter(|w| !stop.contains(*w))
                .map(str::to_string)
                .collect();
            query_words.sort();
            query_words.dedup();

            let scores: Vec<f64> = tokenized
                .iter()
                .map(|t| {
                    let sentence_words: std::collections::HashSet<&str> = t.words().collect();
                    query_words
                        .iter()
                        .filter(|q| sentence_words.contains(q.as_str()))
                        .map(|q| corpus_tf.get(q.as_str()).copied().unwrap_or(0) as f64)
                        .sum()
                })
                .collect();
            rank_by_scores(&sentences, &scores)
        }
        BaselineMethod::Lead => {
            let last_start: usize = documents
                .iter()
                .take(documents.len().saturating_sub(1))
                .map(|d| d.sentences.len())
                .sum();
            let scores: Vec<f64> = (0..sentences.len())
                .map(|i| if i >= last_start { 1.0 } else { 0.0 })
                .collect();
            rank_by_scores(&sentences, &scores)
        }
    }
}

/// Per-query scores in the evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryEval {
    pub cluster_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub su4: RougeScore,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub recall_at: BTreeMap<usize, f64>,
}

/// Macro-averaged scores across queries.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct MacroScores {
    pub r1: RougeScore,
    pub r2: RougeScore,
    pub su4: RougeScore,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub recall_at: BTreeMap<usize, f64>,
}

/// The JSON evaluation report: per-query scores plus macro averages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub query_count: usize,
    pub queries: Vec<QueryEval>,
    pub macro_avg: MacroScores,
}

impl EvalReport {
    pub fn from_queries(queries: Vec<QueryEval>) -> EvalReport {
        let n = queries.len().max(1) as f64;
        let mut macro_avg = MacroScores::default();
        let mean_score = |get: &dyn Fn(&QueryEval) -> RougeScore| RougeScore {
            recall: queries.iter().map(|q| get(q).recall).sum::<f64>() / n,
            precision: queries.iter().map(|q| get(q).precision).sum::<f64>() / n,
            f1: queries.iter().map(|q| get(q).f1).sum::<f64>() / n,
        };
        macro_avg.r1 = mean_score(&|q| q.r1);
        macro_avg.r2 = mean_score(&|q| q.r2);
        macro_avg.su4 = mean_score(&|q| q.su4);
        let mut ks: Vec<usize> = queries
            .iter()
            .flat_map(|q| q.recall_at.keys().copied())
            .collect();
        ks.sort_unstable();
        ks.dedup();
        for k in ks {
            let mean = queries
                .iter()
                .filter_map(|q| q.recall_at.get(&k))
                .sum::<f64>()
                / n;
            macro_avg.recall_at.insert(k, mean);
        }
        EvalReport {
            query_count: queries.len(),
            queries,
            macro_avg,
        }
    }

    /// CSV mirror of the report: one row per query plus a macro row,
    /// with R-1/R-2/R-SU4 F1 columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cluster_id,r1_f1,r2_f1,su4_f1\n");
        for q in &self.queries {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6}\n",
                q.cluster_id, q.r1.f1, q.r2.f1, q.su4.f1
            ));
        }
        out.push_str(&format!(
            "MACRO,{:.6},{:.6},{:.6}\n",
            self.macro_avg.r1.f1, self.macro_avg.r2.f1, self.macro_avg.su4.f1
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranker::RankedSentence;

    fn ranked(sentences: &[&str]) -> RankedEvidence {
        RankedEvidence {
            items: sentences
                .iter()
                .enumerate()
                .map(|(i, s)| RankedSentence {
                    index: i,
                    sentence: s.to_string(),
                    score: 1.0 - i as f64 * 0.1,
                })
                .collect(),
        }
    }

    #[test]
    fn recall_identity_and_zero() {
        let reference = tokenize("the dam broke overnight");
        let r = ranked(&["the dam broke overnight"]);
        assert!(
            (recall_at_k(&r, std::slice::from_ref(&reference), 5).unwrap() - 1.0).abs() < 1e-12
        );

        let r = ranked(&["totally different content"]);
        assert_eq!(recall_at_k(&r, &[reference], 5).unwrap(), 0.0);
    }

    #[test]
    fn recall_means_over_references() {
        // One reference fully covered, one disjoint -> mean of 1 and 0.
        let refs = vec![tokenize("a b c"), tokenize("x y z")];
        let r = ranked(&["a b c"]);
        assert!((recall_at_k(&r, &refs, 1).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn recall_errors() {
        let r = ranked(&["a"]);
        assert_eq!(recall_at_k(&r, &[], 1), Err(EvidenceError::Rouge(RougeError::NoReferences)));
        assert_eq!(
            recall_at_k(&r, &[tokenize("a")], 0),
            Err(EvidenceError::InvalidK)
        );
    }

    #[test]
    fn recall_nondecreasing_in_k() {
        let refs = vec![tokenize("storm damage closed the mountain road")];
        let r = ranked(&[
            "storm damage was heavy",
            "the mountain road stayed shut",
            "closed the mountain road",
        ]);
        let mut prev = 0.0;
        for k in 1..=3 {
            let v = recall_at_k(&r, &refs, k).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn extract_skips_duplicates() {
        let r = ranked(&["the flood hit town", "the flood hit town", "a chess match ended"]);
        let e = assemble_extract(&r, &ExtractBudget::default());
        assert_eq!(e.indices, vec![0, 2]);
    }

    #[test]
    fn extract_truncates_at_budget() {
        let r = ranked(&["one two three four five six seven eight"]);
        let budget = ExtractBudget {
            word_budget: 5,
            redundancy_threshold: 0.6,
        };
        let e = assemble_extract(&r, &budget);
        assert_eq!(e.sentences, vec!["one two three four five"]);
        assert!(e.truncated_last);
    }

    #[test]
    fn extract_takes_orthogonal_sentences_in_rank_order() {
        let r = ranked(&["aa bb", "cc dd", "ee ff", "gg hh"]);
        let budget = ExtractBudget {
            word_budget: 6,
            redundancy_threshold: 0.6,
        };
        let e = assemble_extract(&r, &budget);
        assert_eq!(e.indices, vec![0, 1, 2]);
        let total: usize = e
            .sentences
            .iter()
            .map(|s| tokenize(s).word_count)
            .sum();
        assert!(total <= 6);
    }

    #[test]
    fn evaluate_extract_identity_and_empty() {
        let refs = vec![tokenize("the quick brown fox jumps")];
        let scores = evaluate_extract(
            &["the quick brown fox jumps".to_string()],
            &refs,
            false,
        )
        .unwrap();
        assert_eq!(scores.r1.f1, 1.0);
        assert_eq!(scores.r2.f1, 1.0);
        assert_eq!(scores.su4.f1, 1.0);

        let empty = evaluate_extract(&[], &refs, false).unwrap();
        assert_eq!(empty.r1.f1, 0.0);
        assert_eq!(empty.su4.f1, 0.0);
    }

    fn docs(spec: &[&[&str]]) -> Vec<Document> {
        spec.iter()
            .enumerate()
            .map(|(i, sents)| Document {
                doc_id: format!("d{i}"),
                sentences: sents.iter().map(|s| s.to_string()).collect(),
            })
            .collect()
    }

    #[test]
    fn lead_single_document_keeps_order() {
        let documents = docs(&[&["first", "second", "third"]]);
        let r = baseline_rank(BaselineMethod::Lead, "anything", &documents);
        let order: Vec<usize> = r.items.iter().map(|i| i.index).collect();
        assert_eq!(order, vec![0, 1, 2]);
    }

    #[test]
    fn lead_puts_last_document_first() {
        let documents = docs(&[&["a1", "a2"], &["b1", "b2"]]);
        let r = baseline_rank(BaselineMethod::Lead, "q", &documents);
        let texts: Vec<&str> = r.items.iter().map(|i| i.sentence.as_str()).collect();
        assert_eq!(texts, vec!["b1", "b2", "a1", "a2"]);
    }

    #[test]
    fn termfreq_prefers_matching_sentence() {
        let documents = docs(&[&[
            "nothing relevant here",
            "also nothing",
            "the reactor shutdown was confirmed",
        ]]);
        let r = baseline_rank(BaselineMethod::TermFreq, "reactor shutdown", &documents);
        assert_eq!(r.items[0].index, 2);
        assert!(r.items[0].score > 0.0);
        assert_eq!(r.items[1].score, 0.0);
    }

    #[test]
    fn termfreq_empty_query_keeps_original_order() {
        let documents = docs(&[&["s one", "s two", "s three"]]);
        let r = baseline_rank(BaselineMethod::TermFreq, "", &documents);
        let order: Vec<usize> = r.items.iter().map(|i| i.index).collect();
        assert_eq!(order, vec![0, 1, 2]);
        assert!(r.items.iter().all(|i| i.score == 0.0));
    }

    #[test]
    fn unknown_method_is_error() {
        assert!(matches!(
            "centroid".parse::<BaselineMethod>(),
            Err(EvidenceError::UnknownMethod(_))
        ));
        assert_eq!("lead".parse::<BaselineMethod>().unwrap(), BaselineMethod::Lead);
    }

    #[test]
    fn report_macro_average_and_csv() {
        let q = |id: &str, f1: f64| QueryEval {
            cluster_id: id.to_string(),
            query_id: None,
            r1: RougeScore {
                recall: f1,
                precision: f1,
                f1,
            },
            r2: RougeScore::ZERO,
            su4: RougeScore::ZERO,
            recall_at: BTreeMap::from([(10, f1)]),
        };
        let report = EvalReport::from_queries(vec![q("c1", 0.2), q("c2", 0.4)]);
        assert!((report.macro_avg.r1.f1 - 0.3).abs() < 1e-12);
        assert!((report.macro_avg.recall_at[&10] - 0.3).abs() < 1e-12);
        let csv = report.to_csv();
        assert!(csv.starts_with("cluster_id,"));
        assert!(csv.lines().count() == 4);
        assert!(csv.contains("MACRO,"));
    }
}
