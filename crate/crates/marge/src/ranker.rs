//! The query model: featurize (query UMR, sentence) pairs, train a
//! linear regressor on mean-squared error, score and rank evidence, and
//! bridge to external neural scorers.
//!
//! Features are hashed into a 2^20-dimensional space: query and sentence
//! unigrams/bigrams, intersection unigrams, clipped-overlap ratios,
//! a sentence-length bucket, and the query's `[MASK]` count. The
//! `[MASK]` token participates as an ordinary query token.
//!
//! Persisted parameter files are little-endian binary: magic `MRGE`,
//! version (u32), dim (u64), `dim` weights (f64), bias (f64), then a
//! JSON metadata trailer to end of file.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::map_collect;
use crate::supervision::TrainingPair;
use crate::text::{hash_feature, tokenize, SparseVector};

/// Dimensionality of the hashed feature space.
pub const FEATURE_DIM: usize = 1 << 20;

const PARAMS_MAGIC: &[u8; 4] = b"MRGE";
const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RankerError {
    #[error("training requires at least one pair")]
    NoPairs,
    #[error("all {0} pairs were skipped (non-finite targets)")]
    AllPairsSkipped(usize),
    #[error("training config: {0}")]
    BadConfig(String),
    #[error("missing score for id {0}")]
    MissingScore(u64),
    #[error("duplicate score for id {0}")]
    DuplicateScore(u64),
    #[error("non-finite score for id {0}")]
    NonFiniteScore(u64),
    #[error("params file: {0}")]
    BadParamsFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn query_tokens(query_umr: &str) -> Vec<String> {
    query_umr
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

fn bigrams(tokens: &[String]) -> Vec<String> {
    tokens
        .windows(2)
        .map(|w| format!("{} {}", w[0], w[1]))
        .collect()
}

fn clipped(a: &HashMap<&str, usize>, b: &HashMap<&str, usize>) -> usize {
    a.iter()
        .filter_map(|(k, &ca)| b.get(k).map(|&cb| ca.min(cb)))
        .sum()
}

/// Clipped unigram overlap between query and sentence divided by the
/// sentence token count. This is the primary lexical-match signal.
pub fn unigram_overlap_ratio(query_umr: &str, sentence: &str) -> f64 {
    let q = query_tokens(query_umr);
    let s = tokenize(sentence).tokens;
    if s.is_empty() {
        return 0.0;
    }
    clipped(&counts(&q), &counts(&s)) as f64 / s.len() as f64
}

/// Hash (query, sentence) into a sparse feature vector of [`FEATURE_DIM`].
///
/// Token features carry length-normalized term frequencies and the
/// overlap dimensions are ratios in [0, 1], so every vector has small
/// bounded norm and the default learning rate is stable. The mask-count
/// dimension is log-scaled for the same reason.
pub fn featurize(query_umr: &str, sentence: &str) -> SparseVector {
    let q = query_tokens(query_umr);
    let seq = tokenize(sentence);
    let s = seq.tokens.clone();

    let mut vec = SparseVector::new(FEATURE_DIM);
    let mut add = |feature: &str, weight: f64| {
        vec.add(hash_feature(feature, FEATURE_DIM), weight);
    };

    let q_counts = counts(&q);
    let s_counts = counts(&s);
    for (tok, &c) in &q_counts {
        add(&format!("q:{tok}"), c as f64 / q.len() as f64);
    }
    for (tok, &c) in &s_counts {
        add(&format!("s:{tok}"), c as f64 / s.len() as f64);
    }
    let q_bi = bigrams(&q);
    let s_bi = bigrams(&s);
    for (bi, &c) in &counts(&q_bi) {
        add(&format!("q:{bi}"), c as f64 / q_bi.len() as f64);
    }
    for (bi, &c) in &counts(&s_bi) {
        add(&format!("s:{bi}"), c as f64 / s_bi.len() as f64);
    }
    let uni_overlap = clipped(&q_counts, &s_counts);
    if !s.is_empty() {
        for (tok, &c) in &s_counts {
            if let Some(&qc) = q_counts.get(tok) {
                add(&format!("x:{tok}"), qc.min(c) as f64 / s.len() as f64);
            }
        }
        add("o:uni_ratio", uni_overlap as f64 / s.len() as f64);
    }
    if !s_bi.is_empty() {
        let bi_overlap = clipped(&counts(&q_bi), &counts(&s_bi));
        add("o:bi_ratio", bi_overlap as f64 / s_bi.len() as f64);
    }
    add(&format!("s:len_bucket={}", (seq.word_count / 5).min(20)), 1.0);
    let mask_count = q.iter().filter(|t| t.as_str() == "[mask]").count();
    if mask_count > 0 {
        add("q:mask_count", (1.0 + mask_count as f64).ln());
    }
    vec
}

/// SGD hyperparameters. Defaults mirror a batch size of 128 for 3 epochs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 128,
            epochs: 3,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RankerError> {
        if self.epochs == 0 {
            return Err(RankerError::BadConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(RankerError::BadConfig("batch_size must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(RankerError::BadConfig(
                "learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Provenance recorded alongside learned weights.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub lambda: f64,
    pub gamma: f64,
}

/// Learned weight vector and bias of the pointwise evidence model.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorParams {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub meta: TrainMeta,
}

impl RegressorParams {
    pub fn zeros(meta: TrainMeta) -> Self {
        RegressorParams {
            weights: vec![0.0; FEATURE_DIM],
            bias: 0.0,
            meta,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), RankerError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(PARAMS_MAGIC)?;
        w.write_all(&PARAMS_VERSION.to_le_bytes())?;
        w.write_all(&(self.weights.len() as u64).to_le_bytes())?;
        for weight in &self.weights {
            w.write_all(&weight.to_le_bytes())?;
        }
        w.write_all(&self.bias.to_le_bytes())?;
        serde_json::to_writer(&mut w, &self.meta)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RankerError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PARAMS_MAGIC {
            return Err(RankerError::BadParamsFile("bad magic".into()));
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        let version = u32::from_le_bytes(buf4);
        if version != PARAMS_VERSION {
            return Err(RankerError::BadParamsFile(format!(
                "unsupported version {version}"
            )));
        }
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let dim = u64::from_le_bytes(buf8) as usize;
        let mut weights = vec![0.0f64; dim];
        for w in weights.iter_mut() {
            r.read_exact(&mut buf8)?;
            *w = f64::from_le_bytes(buf8);
        }
        r.read_exact(&mut buf8)?;
        let bias = f64::from_le_bytes(buf8);
        let mut trailer = Vec::new();
        r.read_to_end(&mut trailer)?;
        let meta: TrainMeta = serde_json::from_slice(&trailer)?;
        Ok(RegressorParams {
            weights,
            bias,
            meta,
        })
    }
}

/// Per-epoch mean of pre-update squared errors.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_mse: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: RegressorParams,
    pub log: Vec<EpochLog>,
    pub skipped: usize,
}

fn predict_vec(weights: &[f64], bias: f64, features: &SparseVector) -> f64 {
    features
        .iter()
        .map(|(i, x)| weights[i] * x)
        .sum::<f64>()
        + bias
}

/// Mean-squared-error loss and its analytic gradient over a batch.
/// The weight gradient is returned sparsely as (index, value) pairs.
pub fn batch_mse_and_grad(
    weights: &[f64],
    bias: f64,
    features: &[SparseVector],
    targets: &[f64],
) -> (f64, HashMap<usize, f64>, f64) {
    debug_assert_eq!(features.len(), targets.len());
    let m = features.len() as f64;
    let mut loss = 0.0;
    let mut wgrad: HashMap<usize, f64> = HashMap::new();
    let mut bgrad = 0.0;
    for (fv, &y) in features.iter().zip(targets) {
        let err = predict_vec(weights, bias, fv) - y;
        loss += err * err;
        for (i, x) in fv.iter() {
            *wgrad.entry(i).or_insert(0.0) += 2.0 * err * x / m;
        }
        bgrad += 2.0 * err / m;
    }
    (loss / m, wgrad, bgrad)
}

/// Mini-batch SGD on mean-squared error. Pairs with non-finite targets
/// are skipped with a diagnostic count; shuffling is driven by the
/// config seed so equal inputs give bit-identical parameters.
pub fn train(
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
    lambda: f64,
    gamma: f64,
) -> Result<TrainOutcome, RankerError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(RankerError::NoPairs);
    }
    let kept: Vec<&TrainingPair> = pairs.iter().filter(|p| p.target.is_finite()).collect();
    let skipped = pairs.len() - kept.len();
    if skipped > 0 {
        log::warn!("skipped {skipped} pairs with non-finite targets");
    }
    if kept.is_empty() {
        return Err(RankerError::AllPairsSkipped(pairs.len()));
    }

    let features: Vec<SparseVector> =
        map_collect(&kept, |p| featurize(&p.query_umr, &p.sentence));
    let targets: Vec<f64> = kept.iter().map(|p| p.target).collect();

    let meta = TrainMeta {
        seed: cfg.seed,
        epochs: cfg.epochs,
        lr: cfg.learning_rate,
        lambda,
        gamma,
    };
    let mut weights = vec![0.0f64; FEATURE_DIM];
    let mut bias = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..kept.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sq_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let m = batch.len() as f64;
            let mut wgrad: HashMap<usize, f64> = HashMap::new();
            let mut bgrad = 0.0;
            for &idx in batch {
                let err = predict_vec(&weights, bias, &features[idx]) - targets[idx];
                sq_sum += err * err;
                for (i, x) in features[idx].iter() {
                    *wgrad.entry(i).or_insert(0.0) += 2.0 * err * x / m;
                }
                bgrad += 2.0 * err / m;
            }
            for (i, g) in wgrad {
                weights[i] -= cfg.learning_rate * g;
            }
            bias -= cfg.learning_rate * bgrad;
        }
        log.push(EpochLog {
            epoch: epoch + 1,
            mean_mse: sq_sum / kept.len() as f64,
        });
    }

    Ok(TrainOutcome {
        params: RegressorParams {
            weights,
            bias,
            meta,
        },
        log,
        skipped,
    })
}

/// Raw affinity score for one (query, sentence) pair. Unbounded;
/// predictions are intentionally not clipped.
pub fn predict(params: &RegressorParams, query_umr: &str, sentence: &str) -> f64 {
    predict_vec(
        &params.weights,
        params.bias,
        &featurize(query_umr, sentence),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RankedSentence {
    pub index: usize,
    pub sentence: String,
    pub score: f64,
}

/// Sentences in descending score order; ties keep ascending input index.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
pub struct RankedEvidence {
    pub items: Vec<RankedSentence>,
}

/// Shared comparator: descending score, ties by ascending original index.
pub fn rank_by_scores(sentences: &[String], scores: &[f64]) -> RankedEvidence {
    debug_assert_eq!(sentences.len(), scores.len());
    let mut idx: Vec<usize> = (0..sentences.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    RankedEvidence {
        items: idx
            .into_iter()
            .map(|i| RankedSentence {
                index: i,
                sentence: sentences[i].clone(),
                score: scores[i],
            })
            .collect(),
    }
}

/// Score all candidate sentences against a query and rank them.
pub fn rank_evidence(
    params: &RegressorParams,
    query_umr: &str,
    sentences: &[String],
) -> RankedEvidence {
    let scores = map_collect(sentences, |s| predict(params, query_umr, s));
    rank_by_scores(sentences, &scores)
}

/// One line of the external score-exchange request file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub id: u64,
    pub query: String,
    pub sentence: String,
}

/// One line of the external score-exchange response file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: u64,
    pub score: f64,
}

/// Collect external responses into an id -> score map, rejecting
/// duplicates and non-finite scores.
pub fn collect_scores(responses: &[ScoreResponse]) -> Result<HashMap<u64, f64>, RankerError> {
    let mut map = HashMap::with_capacity(responses.len());
    for r in responses {
        if !r.score.is_finite() {
            return Err(RankerError::NonFiniteScore(r.id));
        }
        if map.insert(r.id, r.score).is_some() {
            return Err(RankerError::DuplicateScore(r.id));
        }
    }
    Ok(map)
}

/// Rank request sentences by externally supplied scores, with the same
/// tie rule as [`rank_evidence`]. Every request id must have a score.
pub fn rank_with_external_scores(
    requests: &[ScoreRequest],
    scores: &HashMap<u64, f64>,
) -> Result<RankedEvidence, RankerError> {
    let sentences: Vec<String> = requests.iter().map(|r| r.sentence.clone()).collect();
    let mut values = Vec::with_capacity(requests.len());
    for r in requests {
        let s = scores.get(&r.id).ok_or(RankerError::MissingScore(r.id))?;
        if !s.is_finite() {
            return Err(RankerError::NonFiniteScore(r.id));
        }
        values.push(*s);
    }
    Ok(rank_by_scores(&sentences, &values))
}

/// Pearson correlation between two equal-length samples. Returns 0 when
/// either side has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}
