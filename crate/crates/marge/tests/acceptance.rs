//! Acceptance suite: one test per shipping criterion. Each test prints a
//! `criterion NN PASS` line (visible with `--nocapture`) and enforces its
//! runtime budget. Oracles here are written independently of the library
//! code paths they check.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use marge::evidence::{assemble_extract, recall_at_k, BaselineMethod, ExtractBudget};
use marge::expansion::{lexrank_scores, CentralityConfig};
use marge::pipeline::{gamma_sweep, read_jsonl, PipelineConfig};
use marge::ranker::{
    batch_mse_and_grad, featurize, pearson, predict, rank_by_scores, rank_evidence, train,
    unigram_overlap_ratio, RankedEvidence, RankedSentence, TrainConfig, FEATURE_DIM,
};
use marge::rouge::{rouge_n, rouge_su4};
use marge::supervision::{
    build_pairs, proxy_query, CorpusRecord, SamplingPolicy, TrainingPair,
};
use marge::synth::choose_cluster_size;
use marge::text::{tokenize, TokenSeq};
use marge::umr::{mask_summary, render_umr, MaskPolicy, SlotSource, SlotSpan};

fn corpus_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/tiny_corpus.jsonl")
}

fn finish(number: u32, name: &str, started: Instant, budget: Duration) {
    let elapsed = started.elapsed();
    assert!(
        elapsed < budget,
        "criterion {number:02} exceeded its {budget:?} budget: {elapsed:?}"
    );
    println!("criterion {number:02} PASS {name} ({elapsed:?})");
}

// ---------------------------------------------------------------- 1 ----

/// Brute-force unit multisets: materialize every unit, intersect by
/// removal. No shared code with the library scorer.
mod rouge_oracle {
    pub fn ngrams(words: &[String], n: usize) -> Vec<String> {
        if words.len() < n {
            return Vec::new();
        }
        (0..=words.len() - n)
            .map(|i| words[i..i + n].join(" "))
            .collect()
    }

    pub fn su4_units(words: &[String]) -> Vec<String> {
        let mut units: Vec<String> = words.to_vec();
        for i in 0..words.len() {
            for j in (i + 1)..words.len() {
                if j - i <= 5 {
                    units.push(format!("{} {}", words[i], words[j]));
                }
            }
        }
        units
    }

    pub fn clipped(reference: &[String], candidate: &[String]) -> usize {
        let mut pool = reference.to_vec();
        let mut overlap = 0;
        for unit in candidate {
            if let Some(pos) = pool.iter().position(|u| u == unit) {
                pool.remove(pos);
                overlap += 1;
            }
        }
        overlap
    }

    pub fn score(ref_units: &[String], cand_units: &[String]) -> (f64, f64, f64) {
        let overlap = clipped(ref_units, cand_units) as f64;
        let recall = if ref_units.is_empty() {
            0.0
        } else {
            overlap / ref_units.len() as f64
        };
        let precision = if cand_units.is_empty() {
            0.0
        } else {
            overlap / cand_units.len() as f64
        };
        let f1 = if recall + precision > 0.0 {
            2.0 * recall * precision / (recall + precision)
        } else {
            0.0
        };
        (recall, precision, f1)
    }
}

#[test]
fn criterion_01_rouge_matches_bruteforce_oracle() {
    let started = Instant::now();
    let vocab = ["a", "b", "c", "d", "e", "f"];
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..200 {
        let mut sample = || -> Vec<String> {
            let len = rng.gen_range(0..=12);
            (0..len)
                .map(|_| vocab[rng.gen_range(0..vocab.len())].to_string())
                .collect()
        };
        let ref_words = sample();
        let cand_words = sample();
        let reference = TokenSeq::from_tokens(ref_words.clone());
        let candidate = TokenSeq::from_tokens(cand_words.clone());

        for n in [1usize, 2] {
            let got = rouge_n(n, &reference, &candidate, false);
            let (r, p, f1) = rouge_oracle::score(
                &rouge_oracle::ngrams(&ref_words, n),
                &rouge_oracle::ngrams(&cand_words, n),
            );
            assert!(
                (got.recall - r).abs() < 1e-12
                    && (got.precision - p).abs() < 1e-12
                    && (got.f1 - f1).abs() < 1e-12,
                "case {case} rouge-{n}: {got:?} vs ({r}, {p}, {f1})"
            );
        }
        let got = rouge_su4(&reference, &candidate, false);
        let (r, p, f1) = rouge_oracle::score(
            &rouge_oracle::su4_units(&ref_words),
            &rouge_oracle::su4_units(&cand_words),
        );
        assert!(
            (got.recall - r).abs() < 1e-12
                && (got.precision - p).abs() < 1e-12
                && (got.f1 - f1).abs() < 1e-12,
            "case {case} su4: {got:?} vs ({r}, {p}, {f1})"
        );
    }
    finish(1, "rouge oracle equivalence", started, Duration::from_secs(5));
}

// ---------------------------------------------------------------- 2 ----

#[test]
fn criterion_02_masking_invariants() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for case in 0..500 {
        // Random summary with position-unique tokens so revealed slot
        // tokens can be recovered exactly from the rendering.
        let n_sentences = rng.gen_range(1..=4);
        let sentences: Vec<TokenSeq> = (0..n_sentences)
            .map(|s| {
                let len = rng.gen_range(1..=12);
                TokenSeq::from_tokens((0..len).map(|t| format!("s{s}w{t}")).collect())
            })
            .collect();
        // Random non-overlapping slot layout per sentence.
        let slots: Vec<Vec<SlotSpan>> = sentences
            .iter()
            .enumerate()
            .map(|(s, seq)| {
                let mut spans = Vec::new();
                let mut pos = 0;
                while pos < seq.len() {
                    if rng.gen_bool(0.5) {
                        let max_len = (seq.len() - pos).min(3);
                        let len = rng.gen_range(1..=max_len);
                        spans.push(SlotSpan {
                            sentence_index: s,
                            token_start: pos,
                            token_end: pos + len,
                            source: SlotSource::Heuristic,
                        });
                        pos += len + 1;
                    } else {
                        pos += 1;
                    }
                }
                spans
            })
            .collect();

        let total_slot_tokens: usize = slots.iter().flatten().map(|s| s.token_len()).sum();
        let max_slot_len = slots.iter().flatten().map(|s| s.token_len()).max();

        for gamma in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let policy = MaskPolicy::new(gamma, 1000 + case).unwrap();
            let masked = mask_summary(&sentences, &slots, &policy);
            let rendered = render_umr(&masked);

            // (d) merged masks never render adjacently.
            assert!(!rendered.contains("[MASK] [MASK]"), "case {case}: {rendered}");

            // (b) full reveal reproduces the original summary.
            if gamma == 1.0 {
                let original = sentences
                    .iter()
                    .map(TokenSeq::join)
                    .collect::<Vec<_>>()
                    .join(" ");
                assert_eq!(rendered, original, "case {case}");
            }

            // Recover the revealed positions from the rendering (tokens
            // are position-unique) and measure revealed slot tokens b.
            let revealed: std::collections::HashSet<&str> = rendered
                .split_whitespace()
                .filter(|t| *t != "[MASK]")
                .collect();
            let mut revealed_slot_tokens = 0usize;
            let mut unrevealed_slots = 0usize;
            for (s, spans) in slots.iter().enumerate() {
                for span in spans {
                    let tokens = &sentences[s].tokens[span.token_start..span.token_end];
                    let all_revealed = tokens.iter().all(|t| revealed.contains(t.as_str()));
                    let none_revealed = tokens.iter().all(|t| !revealed.contains(t.as_str()));
                    assert!(
                        all_revealed || none_revealed,
                        "case {case}: slot revealed partially"
                    );
                    if all_revealed {
                        revealed_slot_tokens += span.token_len();
                    } else {
                        unrevealed_slots += 1;
                    }
                }
            }

            // (a) gamma = 0 reveals zero slot tokens.
            if gamma == 0.0 {
                assert_eq!(revealed_slot_tokens, 0, "case {case}");
            }
            // (c) budget bracket whenever unrevealed slots remain.
            let budget = (gamma * total_slot_tokens as f64).floor() as usize;
            if unrevealed_slots > 0 {
                let max_len = max_slot_len.unwrap_or(1);
                assert!(
                    revealed_slot_tokens >= budget
                        && revealed_slot_tokens <= budget + max_len.saturating_sub(1),
                    "case {case} gamma {gamma}: b={revealed_slot_tokens} B={budget} max={max_len}"
                );
            }
        }
    }
    finish(2, "masking invariants", started, Duration::from_secs(10));
}

// ---------------------------------------------------------------- 3 ----

#[test]
fn criterion_03_gradient_check() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let vocab = ["storm", "flood", "city", "river", "dam", "report", "crews", "road"];
    let pairs: Vec<(String, String, f64)> = (0..50)
        .map(|_| {
            let mut words = |n: usize| -> String {
                (0..n)
                    .map(|_| vocab[rng.gen_range(0..vocab.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let query = words(6);
            let sentence = words(8);
            let y = rng.gen_range(0.0..1.15);
            (query, sentence, y)
        })
        .collect();
    let features: Vec<_> = pairs.iter().map(|(q, s, _)| featurize(q, s)).collect();
    let targets: Vec<f64> = pairs.iter().map(|(_, _, y)| *y).collect();

    // Non-zero starting point over the active coordinates.
    let mut weights = vec![0.0f64; FEATURE_DIM];
    for f in &features {
        for (i, _) in f.iter() {
            weights[i] = ((i % 17) as f64 - 8.0) / 40.0;
        }
    }
    let bias = -0.05;
    let (_, wgrad, _) = batch_mse_and_grad(&weights, bias, &features, &targets);

    let mut coords: Vec<usize> = wgrad.keys().copied().collect();
    coords.sort_unstable();
    coords.shuffle(&mut rng);
    let h = 1e-5;
    for &i in coords.iter().take(10) {
        let analytic = wgrad[&i];
        let mut wp = weights.clone();
        wp[i] += h;
        let (lp, _, _) = batch_mse_and_grad(&wp, bias, &features, &targets);
        let mut wm = weights.clone();
        wm[i] -= h;
        let (lm, _, _) = batch_mse_and_grad(&wm, bias, &features, &targets);
        let numeric = (lp - lm) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        assert!(
            rel < 1e-4,
            "coordinate {i}: analytic {analytic} vs numeric {numeric} (rel {rel})"
        );
    }
    finish(3, "analytic gradient matches finite differences", started, Duration::from_secs(30));
}

// ---------------------------------------------------------------- 4 ----

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two uniforms.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[test]
fn criterion_04_planted_regression_recovery() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let vocab: Vec<String> = (0..60).map(|i| format!("w{i}")).collect();

    let mut pairs = Vec::with_capacity(5000);
    for i in 0..5000 {
        let sent_len = 10usize;
        let shared = rng.gen_range(0..=sent_len);
        let sentence_words: Vec<String> = (0..sent_len)
            .map(|_| vocab[rng.gen_range(0..vocab.len())].clone())
            .collect();
        // Query: the shared prefix of the sentence plus unrelated fillers.
        let mut query_words: Vec<String> = sentence_words[..shared].to_vec();
        for _ in 0..(sent_len - shared) {
            query_words.push(format!("q{}", rng.gen_range(0..40)));
        }
        let query = query_words.join(" ");
        let sentence = sentence_words.join(" ");
        let ratio = unigram_overlap_ratio(&query, &sentence);
        let y = 0.8 * ratio + 0.1 + 0.02 * gaussian(&mut rng);
        pairs.push(TrainingPair {
            pair_id: format!("p{i}"),
            query_umr: query,
            sentence,
            target: y,
        });
    }

    let (held_out, training) = pairs.split_at(1000);
    let cfg = TrainConfig {
        learning_rate: 0.05,
        batch_size: 32,
        epochs: 30,
        seed: 404,
    };
    let outcome = train(training, &cfg, 0.15, 0.0).unwrap();

    let predictions: Vec<f64> = held_out
        .iter()
        .map(|p| predict(&outcome.params, &p.query_umr, &p.sentence))
        .collect();
    let targets: Vec<f64> = held_out.iter().map(|p| p.target).collect();

    let r = pearson(&predictions, &targets);
    let model_mse = predictions
        .iter()
        .zip(&targets)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / targets.len() as f64;
    // Constant-predictor oracle computed from held-out targets alone.
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let constant_mse = targets.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>()
        / targets.len() as f64;

    assert!(r > 0.9, "held-out pearson r = {r}");
    assert!(
        model_mse * 5.0 <= constant_mse,
        "model mse {model_mse} vs constant-mean mse {constant_mse}"
    );
    // Learning makes progress on the training stream.
    let first = outcome.log.first().unwrap().mean_mse;
    let last = outcome.log.last().unwrap().mean_mse;
    assert!(first >= last, "epoch-1 MSE {first} < final MSE {last}");
    finish(4, "planted regression recovery", started, Duration::from_secs(30));
}

// ---------------------------------------------------------------- 5 ----

#[test]
fn criterion_05_gamma_sweep_direction() {
    let started = Instant::now();
    let records: Vec<CorpusRecord> = read_jsonl(&corpus_path()).unwrap();
    assert!(records.len() >= 5, "bundled corpus must hold >= 5 clusters");
    let cfg = PipelineConfig::default();
    let rows = gamma_sweep(&cfg, &records).unwrap();
    let at = |g: f64| {
        rows.iter()
            .find(|r| (r.gamma - g).abs() < 1e-12)
            .unwrap_or_else(|| panic!("no sweep row for gamma {g}"))
    };
    let low = at(0.0).pearson_r;
    let high = at(1.0).pearson_r;
    assert!(
        high > low,
        "held-out pearson must rise with gamma: r(1.0)={high} vs r(0.0)={low}"
    );
    finish(5, "gamma sweep direction", started, Duration::from_secs(60));
}

// ---------------------------------------------------------------- 6 ----

/// Dense LexRank oracle built from scratch: explicit vocabulary, dense
/// tf-idf, dense cosine, threshold, row-normalize, then 60 dense
/// transition-matrix multiplications (repeated squaring) from uniform.
mod lexrank_oracle {
    pub fn stationary(
        sentences: &[Vec<String>],
        threshold: f64,
        damping: f64,
    ) -> Vec<f64> {
        let n = sentences.len();
        let mut vocab: Vec<&str> = sentences.iter().flatten().map(|s| s.as_str()).collect();
        vocab.sort_unstable();
        vocab.dedup();
        let dim = vocab.len();
        let index: std::collections::HashMap<&str, usize> =
            vocab.iter().enumerate().map(|(i, w)| (*w, i)).collect();

        let mut df = vec![0usize; dim];
        for s in sentences {
            let mut seen = vec![false; dim];
            for w in s {
                seen[index[w.as_str()]] = true;
            }
            for (d, flag) in df.iter_mut().zip(&seen) {
                if *flag {
                    *d += 1;
                }
            }
        }
        let idf: Vec<f64> = df
            .iter()
            .map(|&d| if d > 0 { (n as f64 / d as f64).ln() } else { 0.0 })
            .collect();

        let dense: Vec<Vec<f64>> = sentences
            .iter()
            .map(|s| {
                let mut v = vec![0.0; dim];
                for w in s {
                    v[index[w.as_str()]] += 1.0;
                }
                for (x, i) in v.iter_mut().zip(&idf) {
                    *x *= i;
                }
                v
            })
            .collect();
        let cos = |a: &[f64], b: &[f64]| -> f64 {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                dot / (na * nb)
            }
        };

        // Row-stochastic damped transition T[i][j] = P(i -> j).
        let mut t = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut row = vec![0.0; n];
            for j in 0..n {
                let sim = cos(&dense[i], &dense[j]);
                if sim >= threshold {
                    row[j] = sim;
                }
            }
            let sum: f64 = row.iter().sum();
            for j in 0..n {
                let m = if sum > 0.0 { row[j] / sum } else { 1.0 / n as f64 };
                t[i][j] = damping * m + (1.0 - damping) / n as f64;
            }
        }

        // 60 dense matrix multiplications: repeated squaring of T. Each
        // power of a stochastic matrix is stochastic, so rows are
        // renormalized to absorb floating-point drift (which the huge
        // exponent 2^60 would otherwise amplify).
        let mut power = t;
        for _ in 0..60 {
            let mut next = vec![vec![0.0; n]; n];
            for i in 0..n {
                for (k, row_k) in power.iter().enumerate() {
                    let pik = power[i][k];
                    if pik == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        next[i][j] += pik * row_k[j];
                    }
                }
            }
            for row in next.iter_mut() {
                let sum: f64 = row.iter().sum();
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
            power = next;
        }
        // Uniform start: p = (1/n) 1^T T^(2^60).
        (0..n)
            .map(|j| (0..n).map(|i| power[i][j] / n as f64).sum())
            .collect()
    }
}

#[test]
fn criterion_06_lexrank_matches_dense_oracle() {
    let started = Instant::now();
    let vocab = [
        "storm", "coast", "flood", "rescue", "bridge", "market", "harvest", "election",
        "reactor", "museum", "river", "train",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let cfg = CentralityConfig {
        similarity_threshold: 0.1,
        damping: 0.85,
        epsilon: 1e-10,
        max_iterations: 5000,
    };
    for case in 0..50 {
        let n = rng.gen_range(1..=8);
        let sentences: Vec<Vec<String>> = (0..n)
            .map(|_| {
                let len = rng.gen_range(2..=7);
                (0..len)
                    .map(|_| vocab[rng.gen_range(0..vocab.len())].to_string())
                    .collect()
            })
            .collect();
        let seqs: Vec<TokenSeq> = sentences
            .iter()
            .map(|s| TokenSeq::from_tokens(s.clone()))
            .collect();

        let got = lexrank_scores(&seqs, &cfg);
        let want = lexrank_oracle::stationary(&sentences, 0.1, 0.85);
        for (a, b) in got.iter().zip(&want) {
            assert!(
                (a - b).abs() <= 1e-6,
                "case {case}: {got:?} vs oracle {want:?}"
            );
        }
    }
    finish(6, "lexrank matches dense stationary oracle", started, Duration::from_secs(30));
}

// ---------------------------------------------------------------- 7 ----

/// Independent cosine over raw word counts (same tf weighting as the
/// library's redundancy vectors, computed densely from scratch).
fn count_cosine(a: &str, b: &str) -> f64 {
    let count = |text: &str| -> HashMap<String, f64> {
        let mut m = HashMap::new();
        for w in tokenize(text).words() {
            *m.entry(w.to_string()).or_insert(0.0) += 1.0;
        }
        m
    };
    let ca = count(a);
    let cb = count(b);
    let dot: f64 = ca
        .iter()
        .filter_map(|(k, v)| cb.get(k).map(|w| v * w))
        .sum();
    let na: f64 = ca.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = cb.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[test]
fn criterion_07_extract_assembly_contract() {
    let started = Instant::now();
    let vocab = [
        "flood", "storm", "river", "bridge", "city", "crews", "road", "town", "water", "damage",
        "report", "officials", "market", "harvest", "coast", "rescue",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let budget = ExtractBudget {
        word_budget: 250,
        redundancy_threshold: 0.6,
    };
    for case in 0..200 {
        let n = rng.gen_range(1..=40);
        let sentences: Vec<String> = (0..n)
            .map(|_| {
                let len = rng.gen_range(1..=30);
                (0..len)
                    .map(|_| vocab[rng.gen_range(0..vocab.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let ranked = rank_by_scores(&sentences, &scores);
        let extract = assemble_extract(&ranked, &budget);

        let total_words: usize = extract
            .sentences
            .iter()
            .map(|s| tokenize(s).word_count)
            .sum();
        assert!(total_words <= 250, "case {case}: {total_words} words");

        // Pre-truncation redundancy: check the ORIGINAL kept sentences.
        let originals: Vec<&String> = extract
            .indices
            .iter()
            .map(|&i| &sentences[i])
            .collect();
        for i in 0..originals.len() {
            for j in (i + 1)..originals.len() {
                let sim = count_cosine(originals[i], originals[j]);
                assert!(
                    sim < 0.6,
                    "case {case}: kept pair ({i}, {j}) cosine {sim}"
                );
            }
        }
    }
    finish(7, "extract assembly contract", started, Duration::from_secs(30));
}

// ---------------------------------------------------------------- 8 ----

#[test]
fn criterion_08_cluster_size_matches_exhaustive_scan() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for case in 0..1000 {
        let own = rng.gen_range(1..=400);
        let n_neighbors = rng.gen_range(0..=8);
        // Coarse lengths make exact ties common.
        let neighbors: Vec<usize> = (0..n_neighbors)
            .map(|_| rng.gen_range(1..=8) * 50)
            .collect();
        let target = rng.gen_range(1..=8) * 50;

        let got = choose_cluster_size(own, &neighbors, target);

        // Exhaustive oracle: enumerate every admissible size, stable
        // argmin (first minimum wins, i.e., the smaller size).
        let totals: Vec<usize> = (1..=1 + neighbors.len())
            .map(|n| own + neighbors[..n - 1].iter().sum::<usize>())
            .collect();
        let want = totals
            .iter()
            .enumerate()
            .min_by_key(|(_, &t)| t.abs_diff(target))
            .map(|(i, _)| i + 1)
            .unwrap();
        assert_eq!(got, want, "case {case}: own={own} neighbors={neighbors:?} target={target}");
    }
    finish(8, "cluster size matches exhaustive scan", started, Duration::from_secs(5));
}

// ---------------------------------------------------------------- 9 ----

#[test]
fn criterion_09_end_to_end_ranking_sanity() {
    let started = Instant::now();
    let records: Vec<CorpusRecord> = read_jsonl(&corpus_path()).unwrap();

    // Full pipeline at gamma = 1 (reference-as-proxy-query evaluation).
    let cfg = PipelineConfig {
        gamma: 1.0,
        epochs: 30,
        learning_rate: 0.05,
        batch_size: 32,
        ..PipelineConfig::default()
    };
    let policy = SamplingPolicy {
        granularity: cfg.granularity,
        head: cfg.head,
        tail: cfg.tail,
    };
    let mask_policy = MaskPolicy::new(cfg.gamma, cfg.seed).unwrap();
    let extractor = cfg.slot_extractor();
    let target_cfg = cfg.target_config();

    let mut pairs = Vec::new();
    for record in &records {
        pairs.extend(
            build_pairs(record, &policy, &mask_policy, &extractor, &target_cfg)
                .unwrap()
                .pairs,
        );
    }
    let outcome = train(&pairs, &cfg.train_config(), cfg.lambda, cfg.gamma).unwrap();

    let mut trained_sum = 0.0;
    let mut termfreq_sum = 0.0;
    let mut random_sum = 0.0;
    let random_seeds = 20u64;

    for record in &records {
        let references = vec![tokenize(&record.summary.join(" "))];
        let sentences = record.all_sentences();
        let (query, _) = proxy_query(record, &extractor, &mask_policy);

        let ranked = rank_evidence(&outcome.params, &query, &sentences);
        trained_sum += recall_at_k(&ranked, &references, 10).unwrap();

        let baseline =
            marge::evidence::baseline_rank(BaselineMethod::TermFreq, &query, &record.documents);
        termfreq_sum += recall_at_k(&baseline, &references, 10).unwrap();

        for seed in 0..random_seeds {
            let mut order: Vec<usize> = (0..sentences.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(909 + seed);
            order.shuffle(&mut rng);
            let shuffled = RankedEvidence {
                items: order
                    .iter()
                    .map(|&i| RankedSentence {
                        index: i,
                        sentence: sentences[i].clone(),
                        score: 0.0,
                    })
                    .collect(),
            };
            random_sum += recall_at_k(&shuffled, &references, 10).unwrap() / random_seeds as f64;
        }
    }

    let n = records.len() as f64;
    let trained = trained_sum / n;
    let random = random_sum / n;
    let termfreq = termfreq_sum / n;
    println!("  mean R@10: trained={trained:.4} random={random:.4} termfreq={termfreq:.4}");
    assert!(
        trained >= 2.0 * random,
        "trained R@10 {trained} must be >= 2x random {random}"
    );
    assert!(
        trained >= termfreq,
        "trained R@10 {trained} must be >= termfreq {termfreq}"
    );
    finish(9, "end-to-end ranking sanity", started, Duration::from_secs(120));
}

// --------------------------------------------------------------- 10 ----

#[test]
fn criterion_10_stage_determinism() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_path();
    let marge_bin = env!("CARGO_BIN_EXE_marge");

    let run = |args: &[&str]| {
        let out = std::process::Command::new(marge_bin)
            .args(args)
            .output()
            .expect("spawn marge");
        assert!(
            out.status.success(),
            "stage failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let corpus_str = corpus.to_str().unwrap();

    let mut digests: HashMap<&str, (Vec<u8>, Vec<u8>)> = HashMap::new();
    for round in 0..2 {
        let base = dir.path().join(format!("round{round}"));
        std::fs::create_dir_all(&base).unwrap();
        let pairs = base.join("pairs.jsonl");
        let params = base.join("params.bin");
        let ranked = base.join("ranked.jsonl");
        let synth = base.join("synth.jsonl");

        run(&["pairs", "--seed", "11", "--corpus", corpus_str, "--out", pairs.to_str().unwrap()]);
        run(&["train", "--seed", "11", "--pairs", pairs.to_str().unwrap(), "--out", params.to_str().unwrap()]);
        run(&[
            "rank",
            "--seed",
            "11",
            "--corpus",
            corpus_str,
            "--params",
            params.to_str().unwrap(),
            "--out",
            ranked.to_str().unwrap(),
        ]);
        run(&["synth", "--corpus", corpus_str, "--out", synth.to_str().unwrap()]);

        for (name, path) in [
            ("pairs", &pairs),
            ("params", &params),
            ("rank", &ranked),
            ("synth", &synth),
        ] {
            let bytes = std::fs::read(path).unwrap();
            let entry = digests.entry(name).or_default();
            if round == 0 {
                entry.0 = bytes;
            } else {
                entry.1 = bytes;
            }
        }
    }
    for (name, (a, b)) in &digests {
        assert!(!a.is_empty(), "{name}: first run produced no bytes");
        assert_eq!(a, b, "{name}: outputs differ between identical runs");
    }
    finish(10, "stage determinism", started, Duration::from_secs(120));
}
