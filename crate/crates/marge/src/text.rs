//! Deterministic tokenization, sentence segmentation, and sparse-vector
//! utilities shared by the rest of the crate.
//!
//! The tokenizer lowercases and splits text into alphanumeric runs and
//! single-character punctuation tokens. "Words" everywhere in this crate
//! (budgets, counts) means alphanumeric tokens.

use std::collections::BTreeMap;
use std::collections::HashMap;

use thiserror::Error;

/// Dimensionality of the shared hashed unigram/bigram feature space.
pub const HASH_DIM: usize = 1 << 24;

/// The literal mask token used in rendered masked text.
pub const MASK_TOKEN: &str = "[MASK]";

#[derive(Debug, Error, PartialEq)]
pub enum TextError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
}

/// An ordered sequence of lowercase tokens plus the number of word
/// (alphanumeric) tokens among them.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
    pub word_count: usize,
}

impl TokenSeq {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let word_count = tokens.iter().filter(|t| is_word_token(t)).count();
        TokenSeq { tokens, word_count }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Word (alphanumeric) tokens only.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens
            .iter()
            .filter(|t| is_word_token(t))
            .map(String::as_str)
    }

    pub fn join(&self) -> String {
        self.tokens.join(" ")
    }

    /// Concatenate several sequences into one.
    pub fn concat<'a, I: IntoIterator<Item = &'a TokenSeq>>(seqs: I) -> TokenSeq {
        let mut tokens = Vec::new();
        for s in seqs {
            tokens.extend(s.tokens.iter().cloned());
        }
        TokenSeq::from_tokens(tokens)
    }
}

/// True for tokens produced from alphanumeric runs.
pub fn is_word_token(tok: &str) -> bool {
    tok.chars().next().is_some_and(|c| c.is_alphanumeric())
}

/// Lowercase a text into alphanumeric-run and single-punctuation tokens.
/// Whitespace is discarded. Deterministic and idempotent: tokenizing the
/// space-joined output reproduces the same tokens.
pub fn tokenize(text: &str) -> TokenSeq {
    let mut tokens = Vec::new();
    let mut run = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            // Keep only alphanumeric chars of the lowercase expansion so
            // re-tokenization cannot split a token (e.g. combining marks).
            for lc in ch.to_lowercase() {
                if lc.is_alphanumeric() {
                    run.push(lc);
                }
            }
        } else {
            if !run.is_empty() {
                tokens.push(std::mem::take(&mut run));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !run.is_empty() {
        tokens.push(run);
    }
    TokenSeq::from_tokens(tokens)
}

fn is_open_quote(c: char) -> bool {
    matches!(c, '"' | '\'' | '\u{201c}' | '\u{2018}')
}

/// Split text into sentences after '.', '?' or '!' when followed by
/// whitespace and an uppercase letter, digit, or opening quote. No
/// character other than inter-sentence whitespace is dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (byte, c) = chars[i];
        if matches!(c, '.' | '?' | '!') {
            let mut j = i + 1;
            let mut saw_ws = false;
            while j < chars.len() && chars[j].1.is_whitespace() {
                saw_ws = true;
                j += 1;
            }
            if saw_ws && j < chars.len() {
                let next = chars[j].1;
                if next.is_uppercase() || next.is_numeric() || is_open_quote(next) {
                    let end = byte + c.len_utf8();
                    let piece = text[start..end].trim();
                    if !piece.is_empty() {
                        out.push(piece.to_string());
                    }
                    start = chars[j].0;
                    i = j;
                    continue;
                }
            }
        }
        i += 1;
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

/// Prefix of `text` containing at most `max_words` alphanumeric runs,
/// cut immediately after the last included word.
pub fn truncate_words(text: &str, max_words: usize) -> &str {
    if max_words == 0 {
        return "";
    }
    let mut words = 0usize;
    let mut in_word = false;
    let mut cut = 0usize;
    for (byte, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if !in_word {
                in_word = true;
                words += 1;
            }
            cut = byte + ch.len_utf8();
        } else {
            if in_word && words == max_words {
                return &text[..cut];
            }
            in_word = false;
        }
    }
    text
}

/// Sparse vector over a fixed-dimension feature space. Stored weights are
/// finite and non-zero; entries iterate in ascending index order.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SparseVector {
    entries: BTreeMap<u32, f64>,
    dim: usize,
}

impl SparseVector {
    pub fn new(dim: usize) -> Self {
        SparseVector {
            entries: BTreeMap::new(),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries.get(&(index as u32)).copied().unwrap_or(0.0)
    }

    /// Accumulate `weight` at `index`. Zero results are removed so the
    /// non-zero invariant holds.
    pub fn add(&mut self, index: usize, weight: f64) {
        debug_assert!(index < self.dim, "index {} out of dim {}", index, self.dim);
        debug_assert!(weight.is_finite());
        if weight == 0.0 {
            return;
        }
        let slot = self.entries.entry(index as u32).or_insert(0.0);
        *slot += weight;
        if *slot == 0.0 {
            self.entries.remove(&(index as u32));
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().map(|(&i, &w)| (i as usize, w))
    }

    pub fn norm(&self) -> f64 {
        self.entries.values().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        // Iterate the smaller map.
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        small
            .entries
            .iter()
            .filter_map(|(i, w)| large.entries.get(i).map(|v| w * v))
            .sum()
    }
}

/// Standard cosine similarity, clamped to [0, 1]. Returns 0 when either
/// vector is empty; a dimension mismatch is a caller bug and errors.
pub fn cosine(u: &SparseVector, v: &SparseVector) -> Result<f64, TextError> {
    if u.dim != v.dim {
        return Err(TextError::DimMismatch {
            left: u.dim,
            right: v.dim,
        });
    }
    if u.is_empty() || v.is_empty() {
        return Ok(0.0);
    }
    let denom = u.norm() * v.norm();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((u.dot(v) / denom).clamp(0.0, 1.0))
}

/// 64-bit FNV-1a over raw bytes. Fixed constants keep hashed vectors
/// bit-reproducible across platforms.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Hash a feature string into a power-of-two dimension space.
pub fn hash_feature(feature: &str, dim: usize) -> usize {
    debug_assert!(dim.is_power_of_two());
    (fnv1a64(feature.as_bytes()) & (dim as u64 - 1)) as usize
}

/// TF-IDF vector over word tokens, one hashed dimension per distinct
/// token (FNV-1a mod [`HASH_DIM`]). Missing idf entries default to 1.
/// Punctuation tokens are ignored.
pub fn vectorize_tfidf(tokens: &TokenSeq, idf: &HashMap<String, f64>) -> SparseVector {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for w in tokens.words() {
        *counts.entry(w).or_insert(0) += 1;
    }
    let mut vec = SparseVector::new(HASH_DIM);
    for (tok, tf) in counts {
        let weight = tf as f64 * idf.get(tok).copied().unwrap_or(1.0);
        vec.add(hash_feature(tok, HASH_DIM), weight);
    }
    vec
}

/// Hashed unigram + adjacent-bigram TF-IDF vector (the retrieval
/// representation). Bigrams are formed over the word tokens after
/// punctuation removal; feature strings are the unigram itself and
/// "w1 w2" for bigrams. Hash collisions accumulate additively.
pub fn vectorize_hashed_bigrams(
    tokens: &TokenSeq,
    dim: usize,
    idf: &HashMap<String, f64>,
) -> SparseVector {
    assert!(dim.is_power_of_two(), "dim must be a power of two");
    let words: Vec<&str> = tokens.words().collect();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for w in &words {
        *counts.entry((*w).to_string()).or_insert(0) += 1;
    }
    for pair in words.windows(2) {
        *counts.entry(format!("{} {}", pair[0], pair[1])).or_insert(0) += 1;
    }
    let mut vec = SparseVector::new(dim);
    for (feature, tf) in counts {
        let weight = tf as f64 * idf.get(&feature).copied().unwrap_or(1.0);
        vec.add(hash_feature(&feature, dim), weight);
    }
    vec
}

/// Distinct unigram and adjacent-bigram feature strings of a token
/// sequence, as used by [`vectorize_hashed_bigrams`]. Exposed for
/// document-frequency computation in index builders.
pub fn bigram_feature_strings(tokens: &TokenSeq) -> Vec<String> {
    let words: Vec<&str> = tokens.words().collect();
    let mut feats: Vec<String> = words.iter().map(|w| (*w).to_string()).collect();
    for pair in words.windows(2) {
        feats.push(format!("{} {}", pair[0], pair[1]));
    }
    feats.sort();
    feats.dedup();
    feats
}
