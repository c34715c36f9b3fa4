//! Unified masked representation: convert summaries into proxy queries
//! and real queries into masked form.
//!
//! Summary masking starts from per-sentence information slots (content
//! word runs, or imported proposition spans), masks all of them, and then
//! reveals randomly sampled slots under a token budget
//! `B = floor(gamma * total slot tokens)`. The budget check runs before
//! each reveal, so `gamma = 0` reveals nothing and `gamma = 1` reveals
//! everything. Adjacent masks merge within a sentence.

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::text::{TokenSeq, MASK_TOKEN};

const FUNCTION_WORDS: &str = include_str!("../data/function_words.txt");
const COMMON_VERBS: &str = include_str!("../data/common_verbs.txt");
const QUERY_LEXICON: &str = include_str!("../data/query_lexicon.txt");

#[derive(Debug, Error, PartialEq)]
pub enum UmrError {
    #[error("query lexicon is empty")]
    EmptyLexicon,
    #[error("gamma must be within [0, 1], got {0}")]
    InvalidGamma(f64),
}

/// Where a slot came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotSource {
    Heuristic,
    Imported,
}

/// A half-open token range within one sentence, eligible for masking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotSpan {
    pub sentence_index: usize,
    pub token_start: usize,
    pub token_end: usize,
    pub source: SlotSource,
}

impl SlotSpan {
    pub fn token_len(&self) -> usize {
        self.token_end - self.token_start
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Revealed(Vec<String>),
    Mask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    SummaryProxy,
    Query,
}

/// Per-sentence alternating revealed/masked segments.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedText {
    pub sentences: Vec<Vec<Segment>>,
    pub provenance: Provenance,
}

impl MaskedText {
    /// Number of mask segments across all sentences.
    pub fn mask_count(&self) -> usize {
        self.sentences
            .iter()
            .flatten()
            .filter(|s| matches!(s, Segment::Mask))
            .count()
    }
}

/// Reveal ratio and RNG seed for proxy-query construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskPolicy {
    pub gamma: f64,
    pub seed: u64,
}

impl MaskPolicy {
    pub fn new(gamma: f64, seed: u64) -> Result<Self, UmrError> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(UmrError::InvalidGamma(gamma));
        }
        Ok(MaskPolicy { gamma, seed })
    }
}

fn load_word_set(raw: &str) -> HashSet<String> {
    raw.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.to_lowercase())
        .collect()
}

/// Shared function-word list (also the stopword list for baselines).
pub fn function_words() -> &'static HashSet<String> {
    use std::sync::OnceLock;
    static WORDS: OnceLock<HashSet<String>> = OnceLock::new();
    WORDS.get_or_init(|| load_word_set(FUNCTION_WORDS))
}

fn common_verbs() -> &'static HashSet<String> {
    use std::sync::OnceLock;
    static WORDS: OnceLock<HashSet<String>> = OnceLock::new();
    WORDS.get_or_init(|| load_word_set(COMMON_VERBS))
}

/// Heuristic slot extractor: maximal runs of word tokens that are not
/// function words (and, by default, not common verbs either).
#[derive(Debug, Clone)]
pub struct SlotExtractor {
    stop: HashSet<String>,
    verbs: HashSet<String>,
    /// When set, lexicon verbs become slot-eligible (ablation switch).
    pub treat_verbs_as_slots: bool,
}

impl Default for SlotExtractor {
    fn default() -> Self {
        SlotExtractor {
            stop: function_words().clone(),
            verbs: common_verbs().clone(),
            treat_verbs_as_slots: false,
        }
    }
}

impl SlotExtractor {
    /// Default lexicons with an explicit verb-ablation switch.
    pub fn new(treat_verbs_as_slots: bool) -> Self {
        SlotExtractor {
            treat_verbs_as_slots,
            ..SlotExtractor::default()
        }
    }

    /// Extractor with an explicit blocked-word list (tests, custom setups).
    pub fn with_stopwords<I: IntoIterator<Item = String>>(words: I) -> Self {
        SlotExtractor {
            stop: words.into_iter().map(|w| w.to_lowercase()).collect(),
            verbs: HashSet::new(),
            treat_verbs_as_slots: false,
        }
    }

    fn blocked(&self, token: &str) -> bool {
        self.stop.contains(token) || (!self.treat_verbs_as_slots && self.verbs.contains(token))
    }

    /// Maximal runs of unblocked word tokens, as sorted non-overlapping
    /// spans. Punctuation always terminates a run.
    pub fn extract(&self, sentence_index: usize, sentence: &TokenSeq) -> Vec<SlotSpan> {
        let mut spans = Vec::new();
        let mut start: Option<usize> = None;
        for (i, tok) in sentence.tokens.iter().enumerate() {
            let in_slot = crate::text::is_word_token(tok) && !self.blocked(tok);
            match (in_slot, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    spans.push(SlotSpan {
                        sentence_index,
                        token_start: s,
                        token_end: i,
                        source: SlotSource::Heuristic,
                    });
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            spans.push(SlotSpan {
                sentence_index,
                token_start: s,
                token_end: sentence.len(),
                source: SlotSource::Heuristic,
            });
        }
        spans
    }

    /// Extract slots for every sentence of a summary.
    pub fn extract_all(&self, sentences: &[TokenSeq]) -> Vec<Vec<SlotSpan>> {
        sentences
            .iter()
            .enumerate()
            .map(|(i, s)| self.extract(i, s))
            .collect()
    }
}

/// One line of a proposition import file.
#[derive(Debug, Clone, Deserialize)]
pub struct PropositionRecord {
    pub doc_id: String,
    pub sentence_index: usize,
    pub spans: Vec<(usize, usize)>,
}

/// Validate imported spans against sentences. Returns per-sentence
/// accepted spans plus a diagnostic per rejected span.
pub fn validate_imported_slots(
    sentences: &[TokenSeq],
    records: &[PropositionRecord],
) -> (Vec<Vec<SlotSpan>>, Vec<String>) {
    let mut accepted: Vec<Vec<SlotSpan>> = vec![Vec::new(); sentences.len()];
    let mut rejected = Vec::new();
    for rec in records {
        if rec.sentence_index >= sentences.len() {
            rejected.push(format!(
                "doc {}: sentence index {} out of range ({} sentences)",
                rec.doc_id,
                rec.sentence_index,
                sentences.len()
            ));
            continue;
        }
        let sentence_len = sentences[rec.sentence_index].len();
        for &(start, end) in &rec.spans {
            if start >= end || end > sentence_len {
                rejected.push(format!(
                    "doc {}: span [{start}, {end}) invalid for sentence {} of length {sentence_len}",
                    rec.doc_id, rec.sentence_index
                ));
                continue;
            }
            let bucket = &mut accepted[rec.sentence_index];
            if bucket
                .iter()
                .any(|s| start < s.token_end && s.token_start < end)
            {
                rejected.push(format!(
                    "doc {}: span [{start}, {end}) overlaps an accepted span in sentence {}",
                    rec.doc_id, rec.sentence_index
                ));
                continue;
            }
            bucket.push(SlotSpan {
                sentence_index: rec.sentence_index,
                token_start: start,
                token_end: end,
                source: SlotSource::Imported,
            });
        }
    }
    for bucket in &mut accepted {
        bucket.sort_by_key(|s| s.token_start);
    }
    (accepted, rejected)
}

/// Build the proxy-query masked form of a summary.
///
/// All slots start masked; slots are revealed one at a time (uniformly
/// sampled per sentence in round-robin order) until the revealed token
/// count reaches `B = floor(gamma * total slot tokens)`. The budget is
/// checked before each reveal.
pub fn mask_summary(
    sentences: &[TokenSeq],
    slots: &[Vec<SlotSpan>],
    policy: &MaskPolicy,
) -> MaskedText {
    debug_assert_eq!(sentences.len(), slots.len());
    let total_slot_tokens: usize = slots
        .iter()
        .flatten()
        .map(SlotSpan::token_len)
        .sum();
    let budget = (policy.gamma * total_slot_tokens as f64).floor() as usize;

    // masked[s][k] tracks whether slot k of sentence s is still masked.
    let mut masked: Vec<Vec<bool>> = slots.iter().map(|s| vec![true; s.len()]).collect();
    let mut revealed_tokens = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);

    'outer: loop {
        let available: Vec<usize> = (0..sentences.len())
            .filter(|&s| masked[s].iter().any(|&m| m))
            .collect();
        if available.is_empty() {
            break;
        }
        for s in available {
            if revealed_tokens >= budget {
                break 'outer;
            }
            let choices: Vec<usize> = masked[s]
                .iter()
                .enumerate()
                .filter(|(_, &m)| m)
                .map(|(k, _)| k)
                .collect();
            let pick = choices[rng.gen_range(0..choices.len())];
            masked[s][pick] = false;
            revealed_tokens += slots[s][pick].token_len();
        }
    }

    let mut out = Vec::with_capacity(sentences.len());
    for (s, sentence) in sentences.iter().enumerate() {
        let mut is_masked = vec![false; sentence.len()];
        for (k, span) in slots[s].iter().enumerate() {
            if masked[s][k] {
                for flag in &mut is_masked[span.token_start..span.token_end] {
                    *flag = true;
                }
            }
        }
        out.push(segments_from_mask_flags(&sentence.tokens, &is_masked));
    }
    MaskedText {
        sentences: out,
        provenance: Provenance::SummaryProxy,
    }
}

fn segments_from_mask_flags(tokens: &[String], is_masked: &[bool]) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut run: Vec<String> = Vec::new();
    for (tok, &m) in tokens.iter().zip(is_masked) {
        if m {
            if !run.is_empty() {
                segments.push(Segment::Revealed(std::mem::take(&mut run)));
            }
            if !matches!(segments.last(), Some(Segment::Mask)) {
                segments.push(Segment::Mask);
            }
        } else {
            run.push(tok.clone());
        }
    }
    if !run.is_empty() {
        segments.push(Segment::Revealed(run));
    }
    segments
}

/// Ordered lowercase query-word patterns; longest match applies first.
#[derive(Debug, Clone)]
pub struct QueryLexicon {
    /// (pattern tokens, original order) sorted by descending length.
    patterns: Vec<Vec<String>>,
}

impl QueryLexicon {
    /// Parse from file contents: one pattern per line, `#` comments.
    pub fn parse(raw: &str) -> Result<Self, UmrError> {
        let mut patterns: Vec<Vec<String>> = raw
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                l.to_lowercase()
                    .split_whitespace()
                    .map(str::to_string)
                    .collect()
            })
            .collect();
        if patterns.is_empty() {
            return Err(UmrError::EmptyLexicon);
        }
        patterns.sort_by_key(|p| std::cmp::Reverse(p.len()));
        Ok(QueryLexicon { patterns })
    }

    /// The bundled default lexicon (interrogatives and request words).
    pub fn bundled() -> Self {
        QueryLexicon::parse(QUERY_LEXICON).expect("bundled lexicon is non-empty")
    }

    fn match_at(&self, tokens: &[String], pos: usize) -> Option<usize> {
        for pattern in &self.patterns {
            if pos + pattern.len() <= tokens.len()
                && tokens[pos..pos + pattern.len()] == pattern[..]
            {
                return Some(pattern.len());
            }
        }
        None
    }
}

/// Mask a real query: lexicon phrases in the narrative become masks, and
/// a title (when present) is prepended as "[MASK] <title> .".
pub fn mask_query(
    title: Option<&TokenSeq>,
    narrative: &TokenSeq,
    lexicon: &QueryLexicon,
) -> MaskedText {
    let mut sentences = Vec::new();
    if let Some(t) = title {
        let mut segs = vec![Segment::Mask];
        let mut tokens = t.tokens.clone();
        tokens.push(".".to_string());
        segs.push(Segment::Revealed(tokens));
        sentences.push(segs);
    }

    let mut is_masked = vec![false; narrative.len()];
    let mut pos = 0;
    while pos < narrative.len() {
        if let Some(len) = lexicon.match_at(&narrative.tokens, pos) {
            for flag in is_masked.iter_mut().skip(pos).take(len) {
                *flag = true;
            }
            pos += len;
        } else {
            pos += 1;
        }
    }
    sentences.push(segments_from_mask_flags(&narrative.tokens, &is_masked));
    MaskedText {
        sentences,
        provenance: Provenance::Query,
    }
}

/// Render masked text as a string: segments joined with single spaces,
/// masks as the literal `[MASK]` token, sentences joined with spaces.
/// A mask ending one sentence and a mask opening the next collapse to a
/// single token, so renderings never contain adjacent masks.
pub fn render_umr(m: &MaskedText) -> String {
    let mut parts: Vec<&str> = Vec::new();
    for sentence in &m.sentences {
        for segment in sentence {
            match segment {
                Segment::Mask => {
                    if parts.last() != Some(&MASK_TOKEN) {
                        parts.push(MASK_TOKEN);
                    }
                }
                Segment::Revealed(tokens) => parts.extend(tokens.iter().map(String::as_str)),
            }
        }
    }
    parts.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn seq(text: &str) -> TokenSeq {
        tokenize(text)
    }

    #[test]
    fn extract_no_content_runs() {
        let ex = SlotExtractor::default();
        assert!(ex.extract(0, &seq("it is of the")).is_empty());
        assert!(ex.extract(0, &seq("")).is_empty());
    }

    #[test]
    fn extract_stated_run_rule() {
        let ex = SlotExtractor::with_stopwords(["the".to_string(), "visited".to_string()]);
        let spans = ex.extract(0, &seq("the president visited beijing yesterday"));
        assert_eq!(
            spans
                .iter()
                .map(|s| (s.token_start, s.token_end))
                .collect::<Vec<_>>(),
            vec![(1, 2), (3, 5)]
        );
    }

    #[test]
    fn punctuation_breaks_runs() {
        let ex = SlotExtractor::with_stopwords(["the".to_string()]);
        let spans = ex.extract(0, &seq("warsaw, poland"));
        assert_eq!(
            spans
                .iter()
                .map(|s| (s.token_start, s.token_end))
                .collect::<Vec<_>>(),
            vec![(0, 1), (2, 3)]
        );
    }

    #[test]
    fn gamma_zero_masks_all_slots() {
        let sentences = vec![seq("the president visited beijing yesterday")];
        let ex = SlotExtractor::with_stopwords(["the".to_string(), "visited".to_string()]);
        let slots = ex.extract_all(&sentences);
        let m = mask_summary(&sentences, &slots, &MaskPolicy::new(0.0, 7).unwrap());
        assert_eq!(render_umr(&m), "the [MASK] visited [MASK]");
    }

    #[test]
    fn gamma_one_reproduces_summary() {
        let sentences = vec![seq("storms closed the mountain pass"), seq("crews reopened it")];
        let ex = SlotExtractor::default();
        let slots = ex.extract_all(&sentences);
        let m = mask_summary(&sentences, &slots, &MaskPolicy::new(1.0, 3).unwrap());
        let expected = sentences
            .iter()
            .map(TokenSeq::join)
            .collect::<Vec<_>>()
            .join(" ");
        assert_eq!(render_umr(&m), expected);
    }

    #[test]
    fn budget_reveals_single_slot() {
        // One sentence, slots of token lengths {2, 3}, gamma = 0.5 -> B = 2.
        // Exactly one slot is revealed whichever is sampled first.
        let sentences = vec![seq("aa bb of cc dd ee")];
        let slots = vec![vec![
            SlotSpan {
                sentence_index: 0,
                token_start: 0,
                token_end: 2,
                source: SlotSource::Heuristic,
            },
            SlotSpan {
                sentence_index: 0,
                token_start: 3,
                token_end: 6,
                source: SlotSource::Heuristic,
            },
        ]];
        for s in 0..16u64 {
            let m = mask_summary(&sentences, &slots, &MaskPolicy::new(0.5, s).unwrap());
            let rendered = render_umr(&m);
            let masks = rendered.matches(MASK_TOKEN).count();
            assert_eq!(masks, 1, "seed {s}: {rendered}");
            assert!(
                rendered == "aa bb of [MASK]" || rendered == "[MASK] of cc dd ee",
                "seed {s}: {rendered}"
            );
        }
    }

    #[test]
    fn masking_is_deterministic() {
        let sentences = vec![seq("floods hit the coastal towns of kerala")];
        let ex = SlotExtractor::default();
        let slots = ex.extract_all(&sentences);
        let policy = MaskPolicy::new(0.5, 99).unwrap();
        let a = mask_summary(&sentences, &slots, &policy);
        let b = mask_summary(&sentences, &slots, &policy);
        assert_eq!(a, b);
    }

    #[test]
    fn no_adjacent_masks_after_merge() {
        let sentences = vec![seq("alpha beta gamma delta")];
        let ex = SlotExtractor::with_stopwords(Vec::<String>::new());
        let slots = ex.extract_all(&sentences);
        let m = mask_summary(&sentences, &slots, &MaskPolicy::new(0.0, 1).unwrap());
        let rendered = render_umr(&m);
        assert_eq!(rendered, "[MASK]");
        assert!(!rendered.contains("[MASK] [MASK]"));
    }

    #[test]
    fn query_masking_with_title() {
        let lexicon = QueryLexicon::bundled();
        let title = seq("Amnesty International");
        let narrative = seq(
            "What is the scope of operations of Amnesty International and what are \
             the international reactions to its activities?",
        );
        let m = mask_query(Some(&title), &narrative, &lexicon);
        assert_eq!(
            render_umr(&m),
            "[MASK] amnesty international . [MASK] the scope of operations of amnesty \
             international and [MASK] the international reactions to its activities ?"
        );
    }

    #[test]
    fn query_with_no_hits_stays_revealed() {
        let lexicon = QueryLexicon::parse("describe\ndiscuss").unwrap();
        let narrative = seq("steroid use in sports");
        let m = mask_query(None, &narrative, &lexicon);
        assert_eq!(render_umr(&m), "steroid use in sports");
    }

    #[test]
    fn adjacent_query_masks_merge() {
        let lexicon = QueryLexicon::parse("describe").unwrap();
        let narrative = seq("describe describe X");
        let m = mask_query(None, &narrative, &lexicon);
        assert_eq!(render_umr(&m), "[MASK] x");
    }

    #[test]
    fn imported_slots_validation() {
        let sentences = vec![seq("a b c d"), seq("e f")];
        let records = vec![
            PropositionRecord {
                doc_id: "d1".into(),
                sentence_index: 0,
                spans: vec![(0, 2), (1, 3), (3, 4)],
            },
            PropositionRecord {
                doc_id: "d1".into(),
                sentence_index: 5,
                spans: vec![(0, 1)],
            },
            PropositionRecord {
                doc_id: "d1".into(),
                sentence_index: 1,
                spans: vec![(1, 9)],
            },
        ];
        let (accepted, rejected) = validate_imported_slots(&sentences, &records);
        // (1,3) overlaps (0,2); sentence 5 out of range; (1,9) out of range.
        assert_eq!(accepted[0].len(), 2);
        assert_eq!(accepted[1].len(), 0);
        assert_eq!(rejected.len(), 3);
        assert!(rejected.iter().all(|d| d.contains("d1")));
    }

    #[test]
    fn render_segment_order() {
        let m = MaskedText {
            sentences: vec![vec![
                Segment::Revealed(vec!["a".into()]),
                Segment::Mask,
                Segment::Revealed(vec!["b".into()]),
            ]],
            provenance: Provenance::Query,
        };
        assert_eq!(render_umr(&m), "a [MASK] b");
    }

    #[test]
    fn invalid_gamma_rejected() {
        assert!(MaskPolicy::new(-0.1, 0).is_err());
        assert!(MaskPolicy::new(1.1, 0).is_err());
    }
}
