//! Prepare controllable inputs for an external abstractive generator:
//! oracle ordering, query prepending, length-bin control tokens,
//! whole-sentence truncation, and the trigram-repeat predicate.
//!
//! Serialized inputs look like
//! `[LEN_230] <query UMR> [SEP] sent_1 [SEP] sent_2 ...`. The `[SEP]`
//! separators are serialization framing and do not count toward the
//! token cap; the length token, query tokens, and sentence tokens do.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rouge::rouge_n;
use crate::text::TokenSeq;

/// Number of length-control bins.
pub const BIN_COUNT: usize = 10;

/// Default input token cap.
pub const DEFAULT_MAX_TOKENS: usize = 768;

const SEP_TOKEN: &str = "[SEP]";

#[derive(Debug, Error, PartialEq)]
pub enum GenPrepError {
    #[error("need at least {BIN_COUNT} distinct summary lengths, got {0}")]
    TooFewDistinctLengths(usize),
    #[error("length bins collide on token {0}; lengths are too clumped for {BIN_COUNT} bins")]
    AmbiguousBins(String),
}

/// One length-control bin: inclusive word range and its control token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBin {
    pub lower: usize,
    pub upper: usize,
    pub token: String,
}

/// Ten equal-frequency bins over observed training summary lengths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBinTable {
    bins: Vec<LengthBin>,
}

fn median_of_sorted(values: &[usize]) -> f64 {
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] + values[n / 2]) as f64 / 2.0
    }
}

fn round_to_ten(x: f64) -> usize {
    ((x / 10.0).round() * 10.0) as usize
}

/// Build the bin table from training summary word counts. Bins are
/// equal-frequency over the distinct lengths; each bin's token number is
/// the median of the lengths it contains, rounded to the nearest ten.
pub fn build_length_bins(training_lengths: &[usize]) -> Result<LengthBinTable, GenPrepError> {
    let mut distinct: Vec<usize> = training_lengths.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < BIN_COUNT {
        return Err(GenPrepError::TooFewDistinctLengths(distinct.len()));
    }

    let mut sorted_all = training_lengths.to_vec();
    sorted_all.sort_unstable();

    let n = distinct.len();
    let mut bins = Vec::with_capacity(BIN_COUNT);
    for k in 0..BIN_COUNT {
        let chunk = &distinct[k * n / BIN_COUNT..(k + 1) * n / BIN_COUNT];
        let lower = chunk[0];
        let upper = if k + 1 == BIN_COUNT {
            *distinct.last().unwrap()
        } else {
            distinct[(k + 1) * n / BIN_COUNT] - 1
        };
        let members: Vec<usize> = sorted_all
            .iter()
            .copied()
            .filter(|&v| v >= lower && v <= upper)
            .collect();
        let median = median_of_sorted(&members);
        let token = format!("[LEN_{}]", round_to_ten(median));
        bins.push(LengthBin {
            lower,
            upper,
            token,
        });
    }

    let mut seen = HashSet::new();
    for bin in &bins {
        if !seen.insert(bin.token.clone()) {
            return Err(GenPrepError::AmbiguousBins(bin.token.clone()));
        }
    }
    Ok(LengthBinTable { bins })
}

impl LengthBinTable {
    pub fn bins(&self) -> &[LengthBin] {
        &self.bins
    }

    /// Total lookup: the bin containing `requested`, else the bin whose
    /// median token number is nearest (first bin wins ties).
    pub fn bin_for(&self, requested: usize) -> &LengthBin {
        if let Some(bin) = self
            .bins
            .iter()
            .find(|b| requested >= b.lower && requested <= b.upper)
        {
            return bin;
        }
        let token_number = |b: &LengthBin| -> usize {
            b.token
                .trim_start_matches("[LEN_")
                .trim_end_matches(']')
                .parse()
                .unwrap_or(0)
        };
        self.bins
            .iter()
            .min_by_key(|b| token_number(b).abs_diff(requested))
            .expect("table has bins")
    }
}

/// Serialized generator input. `length_token` always leads the text.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeneratorInput {
    pub id: String,
    pub text: String,
    pub length_token: String,
    pub requested_length: usize,
}

impl GeneratorInput {
    /// Whitespace tokens of the text, excluding `[SEP]` separators.
    pub fn token_count(&self) -> usize {
        self.text
            .split_whitespace()
            .filter(|t| *t != SEP_TOKEN)
            .count()
    }
}

/// A generated summary coming back from the external generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratedSummary {
    pub id: String,
    pub summary: String,
}

/// Rank sentences by descending ROUGE-2 against the reference summary;
/// ties keep the original order. The output is a permutation of the
/// input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rouge2Metric {
    F1,
    Recall,
}

pub fn oracle_order(
    sentences: &[String],
    reference: &TokenSeq,
    metric: Rouge2Metric,
) -> Vec<String> {
    let scores: Vec<f64> = sentences
        .iter()
        .map(|s| {
            let score = rouge_n(2, reference, &crate::text::tokenize(s), false);
            match metric {
                Rouge2Metric::F1 => score.f1,
                Rouge2Metric::Recall => score.recall,
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.into_iter().map(|i| sentences[i].clone()).collect()
}

/// Assemble one generator input: length token, optional query, then
/// evidence sentences joined by `[SEP]`. Whole sentences are dropped from
/// the tail to respect `max_tokens`; only a first sentence that alone
/// exceeds the cap is truncated mid-sentence.
pub fn prepare_generator_input(
    id: &str,
    evidence: &[String],
    query_umr: Option<&str>,
    requested_length: usize,
    bins: &LengthBinTable,
    max_tokens: usize,
) -> GeneratorInput {
    let length_token = bins.bin_for(requested_length).token.clone();
    let mut parts: Vec<String> = vec![length_token.clone()];
    let mut count = 1usize;

    if let Some(q) = query_umr {
        let mut q_tokens: Vec<&str> = q.split_whitespace().collect();
        // Keep the cap invariant even for oversized queries.
        if count + q_tokens.len() > max_tokens {
            q_tokens.truncate(max_tokens - count);
        }
        count += q_tokens.len();
        if !q_tokens.is_empty() {
            parts.push(q_tokens.join(" "));
        }
    }

    let mut added = 0usize;
    for sentence in evidence {
        let tokens: Vec<&str> = sentence.split_whitespace().collect();
        if count + tokens.len() <= max_tokens {
            parts.push(SEP_TOKEN.to_string());
            parts.push(tokens.join(" "));
            count += tokens.len();
            added += 1;
        } else {
            if added == 0 && max_tokens > count {
                let take = max_tokens - count;
                parts.push(SEP_TOKEN.to_string());
                parts.push(tokens[..take.min(tokens.len())].join(" "));
            }
            break;
        }
    }

    GeneratorInput {
        id: id.to_string(),
        text: parts.join(" "),
        length_token,
        requested_length,
    }
}

/// True iff some contiguous trigram occurs at least twice.
pub fn has_repeated_trigram(tokens: &TokenSeq) -> bool {
    let mut seen = HashSet::new();
    for w in tokens.tokens.windows(3) {
        if !seen.insert(w) {
            return true;
        }
    }
    false
}
