//! Build synthetic multi-document clusters from single-document data by
//! retrieving articles whose summaries resemble a seed summary.
//!
//! Summaries are indexed as hashed unigram+bigram TF-IDF vectors
//! (dimension 2^24, idf = ln(N/df) over the summary collection). For
//! each record the nearest summaries are retrieved, the cluster size is
//! chosen to best match a target summary length, and the concatenated
//! summary is deduplicated front to back. Output clusters reuse the
//! corpus record schema, so they feed straight back into the pipeline.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::exec::map_collect;
use crate::supervision::{CorpusRecord, Document};
use crate::text::{
    bigram_feature_strings, cosine, tokenize, vectorize_hashed_bigrams, vectorize_tfidf,
    SparseVector, TokenSeq,
};

/// Dimensionality of the retrieval vectors.
pub const INDEX_DIM: usize = 1 << 24;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("index needs at least two records, got {0}")]
    TooFewRecords(usize),
    #[error("duplicate summary id: {0}")]
    DuplicateId(String),
    #[error("unknown summary id: {0}")]
    UnknownId(String),
    #[error("pool must be >= 1")]
    EmptyPool,
}

/// Retrieval index over summary vectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryIndex {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<SparseVector>,
    word_counts: Vec<usize>,
    idf: BTreeMap<String, f64>,
}

impl SummaryIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn idf(&self, feature: &str) -> Option<f64> {
        self.idf.get(feature).copied()
    }

    pub fn word_count(&self, id: &str) -> Option<usize> {
        self.position(id).map(|i| self.word_counts[i])
    }

    fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }
}

/// Build a deterministic index over (id, summary tokens) records.
/// idf = ln(N / df) with document frequency over the summaries.
pub fn build_index(records: &[(String, TokenSeq)]) -> Result<SummaryIndex, SynthError> {
    if records.len() < 2 {
        return Err(SynthError::TooFewRecords(records.len()));
    }
    let mut seen = std::collections::HashSet::new();
    for (id, _) in records {
        if !seen.insert(id.as_str()) {
            return Err(SynthError::DuplicateId(id.clone()));
        }
    }

    let n = records.len() as f64;
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for (_, tokens) in records {
        for feature in bigram_feature_strings(tokens) {
            *df.entry(feature).or_insert(0) += 1;
        }
    }
    let idf: BTreeMap<String, f64> = df
        .into_iter()
        .map(|(f, d)| (f, (n / d as f64).ln()))
        .collect();
    let idf_map: HashMap<String, f64> = idf.iter().map(|(k, &v)| (k.clone(), v)).collect();

    let vectors = map_collect(records, |(_, tokens)| {
        vectorize_hashed_bigrams(tokens, INDEX_DIM, &idf_map)
    });
    Ok(SummaryIndex {
        dim: INDEX_DIM,
        ids: records.iter().map(|(id, _)| id.clone()).collect(),
        vectors,
        word_counts: records.iter().map(|(_, t)| t.word_count).collect(),
        idf,
    })
}

/// Top-`pool` neighbor ids by cosine, self excluded, ties by ascending id.
pub fn retrieve_neighbors(
    index: &SummaryIndex,
    query_id: &str,
    pool: usize,
) -> Result<Vec<String>, SynthError> {
    if pool == 0 {
        return Err(SynthError::EmptyPool);
    }
    let q = index
        .position(query_id)
        .ok_or_else(|| SynthError::UnknownId(query_id.to_string()))?;
    let mut scored: Vec<(f64, &str)> = (0..index.len())
        .filter(|&i| i != q)
        .map(|i| {
            let sim = cosine(&index.vectors[q], &index.vectors[i]).expect("same dim");
            (sim, index.ids[i].as_str())
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    Ok(scored
        .into_iter()
        .take(pool)
        .map(|(_, id)| id.to_string())
        .collect())
}

/// Pick the cluster size N in {1, ..., 1 + |neighbors|} whose total
/// summary length (own + first N-1 neighbors) is closest to `target`;
/// ties prefer the smaller N.
pub fn choose_cluster_size(own_length: usize, neighbor_lengths: &[usize], target: usize) -> usize {
    let mut best_n = 1usize;
    let mut best_diff = own_length.abs_diff(target);
    let mut running = own_length;
    for (i, len) in neighbor_lengths.iter().enumerate() {
        running += len;
        let diff = running.abs_diff(target);
        if diff < best_diff {
            best_diff = diff;
            best_n = i + 2;
        }
    }
    best_n
}

/// A retrieval-assembled multi-document training instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCluster {
    pub cluster_id: String,
    /// Source documents, the seed record's own documents first.
    pub documents: Vec<Document>,
    /// Concatenated summary sentences before deduplication.
    pub raw_summary: Vec<String>,
    /// Deduplicated summary sentences.
    pub final_summary: Vec<String>,
    /// Number of source records in the cluster (self included).
    pub size: usize,
}

impl SyntheticCluster {
    pub fn to_corpus_record(&self) -> CorpusRecord {
        CorpusRecord {
            cluster_id: self.cluster_id.clone(),
            documents: self.documents.clone(),
            summary: self.final_summary.clone(),
        }
    }
}

/// Keep a sentence iff its TF cosine stays below `threshold` against all
/// previously kept sentences (front-to-back scan). Idempotent.
pub fn dedup_sentences(sentences: &[String], threshold: f64) -> Vec<String> {
    let empty_idf = HashMap::new();
    let mut kept: Vec<String> = Vec::new();
    let mut kept_vectors: Vec<SparseVector> = Vec::new();
    for s in sentences {
        let v = vectorize_tfidf(&tokenize(s), &empty_idf);
        let redundant = kept_vectors
            .iter()
            .any(|k| cosine(k, &v).expect("same dim") >= threshold);
        if !redundant {
            kept.push(s.clone());
            kept_vectors.push(v);
        }
    }
    kept
}

/// Form a cluster of `size` records: the seed's documents plus the first
/// `size - 1` retrieved records' documents, with the concatenated summary
/// deduplicated front to back.
pub fn form_cluster(
    own: &CorpusRecord,
    retrieved: &[&CorpusRecord],
    size: usize,
    dedup_threshold: f64,
) -> SyntheticCluster {
    debug_assert!(size >= 1 && size <= 1 + retrieved.len());
    let used = &retrieved[..size - 1];
    let mut documents = own.documents.clone();
    let mut raw_summary = own.summary.clone();
    for rec in used {
        documents.extend(rec.documents.iter().cloned());
        raw_summary.extend(rec.summary.iter().cloned());
    }
    let final_summary = dedup_sentences(&raw_summary, dedup_threshold);
    SyntheticCluster {
        cluster_id: own.cluster_id.clone(),
        documents,
        raw_summary,
        final_summary,
        size,
    }
}

/// End-to-end synthetic corpus construction: index all summaries, then
/// per record retrieve `pool` neighbors, choose the cluster size against
/// `target_words`, and form the deduplicated cluster.
pub fn build_synthetic_corpus(
    records: &[CorpusRecord],
    pool: usize,
    target_words: usize,
    dedup_threshold: f64,
) -> Result<Vec<SyntheticCluster>, SynthError> {
    let indexed: Vec<(String, TokenSeq)> = records
        .iter()
        .map(|r| (r.cluster_id.clone(), tokenize(&r.summary.join(" "))))
        .collect();
    let index = build_index(&indexed)?;
    let by_id: HashMap<&str, &CorpusRecord> = records
        .iter()
        .map(|r| (r.cluster_id.as_str(), r))
        .collect();

    let pool = pool.min(records.len() - 1);
    let clusters = records
        .iter()
        .map(|record| {
            let neighbor_ids = retrieve_neighbors(&index, &record.cluster_id, pool)?;
            let neighbor_lengths: Vec<usize> = neighbor_ids
                .iter()
                .map(|id| index.word_count(id).expect("indexed id"))
                .collect();
            let own_length = index.word_count(&record.cluster_id).expect("indexed id");
            let size = choose_cluster_size(own_length, &neighbor_lengths, target_words);
            let retrieved: Vec<&CorpusRecord> = neighbor_ids
                .iter()
                .map(|id| by_id[id.as_str()])
                .collect();
            Ok(form_cluster(record, &retrieved, size, dedup_threshold))
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    Ok(clusters)
}
