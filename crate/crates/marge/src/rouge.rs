//! ROUGE-1/2/SU4 scoring and the label-smoothed regression target that
//! supervises the evidence model.
//!
//! Counting units are built over word tokens only (punctuation excluded).
//! Overlap is clipped multiset intersection. Skip-bigrams allow at most
//! four intervening tokens. Optional Porter stemming is applied to the
//! unit tokens when the `stem` flag is set (off by default everywhere).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stem::porter_stem;
use crate::text::TokenSeq;

#[derive(Debug, Error, PartialEq)]
pub enum RougeError {
    #[error("at least one reference is required")]
    NoReferences,
}

/// Recall, precision, and F1 of one scoring run. All in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct RougeScore {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl RougeScore {
    pub const ZERO: RougeScore = RougeScore {
        recall: 0.0,
        precision: 0.0,
        f1: 0.0,
    };

    fn from_counts(overlap: usize, ref_units: usize, cand_units: usize) -> Self {
        let recall = if ref_units > 0 {
            overlap as f64 / ref_units as f64
        } else {
            0.0
        };
        let precision = if cand_units > 0 {
            overlap as f64 / cand_units as f64
        } else {
            0.0
        };
        let f1 = if recall + precision > 0.0 {
            2.0 * recall * precision / (recall + precision)
        } else {
            0.0
        };
        RougeScore {
            recall,
            precision,
            f1,
        }
    }
}

/// Scoring variant selector for multi-reference evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    R1,
    R2,
    Su4,
}

/// Interpolation weight for the regression target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    pub lambda: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig { lambda: 0.15 }
    }
}

fn prep_words(seq: &TokenSeq, stem: bool) -> Vec<String> {
    seq.words()
        .map(|w| if stem { porter_stem(w) } else { w.to_string() })
        .collect()
}

fn ngram_counts(words: &[String], n: usize) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    if n == 0 || words.len() < n {
        return counts;
    }
    for win in words.windows(n) {
        *counts.entry(win.join(" ")).or_insert(0) += 1;
    }
    counts
}

/// Unigrams plus skip-bigrams with indices i < j, j - i <= 5.
fn su4_counts(words: &[String]) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for w in words {
        *counts.entry(w.clone()).or_insert(0) += 1;
    }
    for i in 0..words.len() {
        for j in (i + 1)..words.len().min(i + 6) {
            *counts
                .entry(format!("{} {}", words[i], words[j]))
                .or_insert(0) += 1;
        }
    }
    counts
}

fn clipped_overlap(a: &HashMap<String, usize>, b: &HashMap<String, usize>) -> usize {
    a.iter()
        .filter_map(|(unit, &ca)| b.get(unit).map(|&cb| ca.min(cb)))
        .sum()
}

fn score_counts(
    ref_counts: &HashMap<String, usize>,
    cand_counts: &HashMap<String, usize>,
) -> RougeScore {
    let overlap = clipped_overlap(ref_counts, cand_counts);
    RougeScore::from_counts(
        overlap,
        ref_counts.values().sum(),
        cand_counts.values().sum(),
    )
}

/// Clipped n-gram overlap between a reference and a candidate.
pub fn rouge_n(n: usize, reference: &TokenSeq, candidate: &TokenSeq, stem: bool) -> RougeScore {
    assert!(n >= 1, "n-gram order must be >= 1");
    let r = prep_words(reference, stem);
    let c = prep_words(candidate, stem);
    score_counts(&ngram_counts(&r, n), &ngram_counts(&c, n))
}

/// ROUGE-SU4: clipped overlap of unigrams plus skip-bigrams with at most
/// four intervening tokens.
pub fn rouge_su4(reference: &TokenSeq, candidate: &TokenSeq, stem: bool) -> RougeScore {
    let r = prep_words(reference, stem);
    let c = prep_words(candidate, stem);
    score_counts(&su4_counts(&r), &su4_counts(&c))
}

/// Label-smoothed supervision signal: ROUGE-2 F1 plus lambda times
/// ROUGE-1 F1, both unstemmed. Range [0, 1 + lambda].
pub fn regression_target(summary: &TokenSeq, sentence: &TokenSeq, cfg: &TargetConfig) -> f64 {
    rouge_n(2, summary, sentence, false).f1 + cfg.lambda * rouge_n(1, summary, sentence, false).f1
}

/// Score against each reference independently and report the arithmetic
/// mean of recall, precision, and F1 across references.
pub fn multi_ref_f1(
    references: &[TokenSeq],
    candidate: &TokenSeq,
    variant: Variant,
    stem: bool,
) -> Result<RougeScore, RougeError> {
    if references.is_empty() {
        return Err(RougeError::NoReferences);
    }
    let mut acc = RougeScore::ZERO;
    for reference in references {
        let s = match variant {
            Variant::R1 => rouge_n(1, reference, candidate, stem),
            Variant::R2 => rouge_n(2, reference, candidate, stem),
            Variant::Su4 => rouge_su4(reference, candidate, stem),
        };
        acc.recall += s.recall;
        acc.precision += s.precision;
        acc.f1 += s.f1;
    }
    let n = references.len() as f64;
    Ok(RougeScore {
        recall: acc.recall / n,
        precision: acc.precision / n,
        f1: acc.f1 / n,
    })
}
