//! Distant supervision: turn a generic summarization corpus into
//! (proxy query, sentence, target) training pairs.
//!
//! Corpus input is JSONL, one record per line:
//! `{"cluster_id", "documents": [{"doc_id", "sentences": [...]}], "summary": [...]}`.
//! Pair output is JSONL of [`TrainingPair`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rouge::{regression_target, TargetConfig};
use crate::text::{fnv1a64, tokenize, TokenSeq};
use crate::umr::{mask_summary, render_umr, MaskPolicy, SlotExtractor};

#[derive(Debug, Error, PartialEq)]
pub enum SupervisionError {
    #[error("record {0}: needs at least one document")]
    NoDocuments(String),
    #[error("record {0}: summary must be non-empty")]
    EmptySummary(String),
    #[error("sampling policy: head + tail must be >= 1")]
    EmptyPolicy,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<String>,
}

/// One cluster of documents with its reference summary.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct CorpusRecord {
    pub cluster_id: String,
    pub documents: Vec<Document>,
    pub summary: Vec<String>,
}

impl CorpusRecord {
    pub fn validate(&self) -> Result<(), SupervisionError> {
        if self.documents.is_empty() {
            return Err(SupervisionError::NoDocuments(self.cluster_id.clone()));
        }
        if self.summary.iter().all(|s| s.trim().is_empty()) {
            return Err(SupervisionError::EmptySummary(self.cluster_id.clone()));
        }
        Ok(())
    }

    /// All document sentences in input order.
    pub fn all_sentences(&self) -> Vec<String> {
        self.documents
            .iter()
            .flat_map(|d| d.sentences.iter().cloned())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Cluster,
    Document,
}

/// Head/tail sentence sampling, per cluster or per document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub granularity: Granularity,
    pub head: usize,
    pub tail: usize,
}

impl SamplingPolicy {
    pub fn validate(&self) -> Result<(), SupervisionError> {
        if self.head + self.tail == 0 {
            return Err(SupervisionError::EmptyPolicy);
        }
        Ok(())
    }
}

/// One supervised regression example.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainingPair {
    pub pair_id: String,
    pub query_umr: String,
    pub sentence: String,
    pub target: f64,
}

fn head_tail_indices(len: usize, head: usize, tail: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..head.min(len)).collect();
    out.extend((len.saturating_sub(tail)..len).filter(|i| *i >= head));
    out
}

/// First `head` and last `tail` sentences, of the concatenated cluster or
/// of each document. Index duplicates from short inputs are dropped while
/// preserving order.
pub fn sample_candidates(record: &CorpusRecord, policy: &SamplingPolicy) -> Vec<String> {
    match policy.granularity {
        Granularity::Cluster => {
            let all = record.all_sentences();
            head_tail_indices(all.len(), policy.head, policy.tail)
                .into_iter()
                .map(|i| all[i].clone())
                .collect()
        }
        Granularity::Document => {
            let mut out = Vec::new();
            for doc in &record.documents {
                for i in head_tail_indices(doc.sentences.len(), policy.head, policy.tail) {
                    out.push(doc.sentences[i].clone());
                }
            }
            out
        }
    }
}

/// Per-record RNG seed: a fixed hash of the global seed and cluster id,
/// so parallel record processing stays deterministic.
pub fn derive_record_seed(global_seed: u64, cluster_id: &str) -> u64 {
    let mut bytes = global_seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(cluster_id.as_bytes());
    fnv1a64(&bytes)
}

/// Train/dev assignment by cluster-id hash (90/10), preventing summary
/// leakage across splits. Bucket 0 of 10 is the dev split.
pub fn is_dev_cluster(cluster_id: &str) -> bool {
    fnv1a64(cluster_id.as_bytes()).is_multiple_of(10)
}

/// Proxy query for a record: its summary masked under `policy`, with the
/// seed re-derived per record. Returns the rendered UMR and the number of
/// slots found.
pub fn proxy_query(
    record: &CorpusRecord,
    extractor: &SlotExtractor,
    policy: &MaskPolicy,
) -> (String, usize) {
    let sentences: Vec<TokenSeq> = record.summary.iter().map(|s| tokenize(s)).collect();
    let slots = extractor.extract_all(&sentences);
    let slot_count = slots.iter().map(Vec::len).sum();
    let record_policy = MaskPolicy {
        gamma: policy.gamma,
        seed: derive_record_seed(policy.seed, &record.cluster_id),
    };
    let masked = mask_summary(&sentences, &slots, &record_policy);
    (render_umr(&masked), slot_count)
}

/// Pairs built from one record, plus any warnings.
#[derive(Debug, Clone)]
pub struct BuiltPairs {
    pub pairs: Vec<TrainingPair>,
    pub warnings: Vec<String>,
}

/// Build training pairs for a record: one pair per sampled candidate, all
/// sharing the record's proxy query. Targets are computed against the
/// raw (unmasked) summary; the mask shapes only the query side.
pub fn build_pairs(
    record: &CorpusRecord,
    policy: &SamplingPolicy,
    mask_policy: &MaskPolicy,
    extractor: &SlotExtractor,
    cfg: &TargetConfig,
) -> Result<BuiltPairs, SupervisionError> {
    record.validate()?;
    policy.validate()?;

    let (query_umr, slot_count) = proxy_query(record, extractor, mask_policy);
    let mut warnings = Vec::new();
    if slot_count == 0 {
        warnings.push(format!(
            "record {}: summary has no information slots; proxy query equals the plain summary",
            record.cluster_id
        ));
    }

    let summary_tokens =
        TokenSeq::concat(&record.summary.iter().map(|s| tokenize(s)).collect::<Vec<_>>());
    let pairs = sample_candidates(record, policy)
        .into_iter()
        .enumerate()
        .map(|(i, sentence)| {
            let target = regression_target(&summary_tokens, &tokenize(&sentence), cfg);
            TrainingPair {
                pair_id: format!("{}:{i:04}", record.cluster_id),
                query_umr: query_umr.clone(),
                sentence,
                target,
            }
        })
        .collect();
    Ok(BuiltPairs { pairs, warnings })
}
