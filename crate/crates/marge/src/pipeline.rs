//! Pipeline stages behind the CLI: JSON config, JSONL I/O with atomic
//! writes, and one function per subcommand.
//!
//! Every stage is deterministic given an identical config and seed, and
//! never mutates its inputs. Outputs are written to a temp file and
//! renamed into place. Errors carry the process exit code: 1 usage,
//! 2 I/O, 3 data validation, 4 numeric failure.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::{
    assemble_extract, evaluate_extract, recall_at_k, BaselineMethod, EvalReport, EvidenceError,
    ExtractBudget, QueryEval,
};
use crate::exec::map_collect;
use crate::expansion::{expand_query, CentralityConfig};
use crate::genprep::{
    build_length_bins, oracle_order, prepare_generator_input, GenPrepError, GeneratorInput,
    Rouge2Metric,
};
use crate::ranker::{
    pearson, rank_evidence, rank_with_external_scores, train, RankedEvidence, RankerError,
    RegressorParams, ScoreRequest, ScoreResponse, TrainConfig,
};
use crate::rouge::TargetConfig;
use crate::supervision::{
    build_pairs, is_dev_cluster, proxy_query, CorpusRecord, Granularity, SamplingPolicy,
    SupervisionError, TrainingPair,
};
use crate::synth::{build_synthetic_corpus, SynthError};
use crate::text::tokenize;
use crate::umr::{
    mask_query, mask_summary, render_umr, validate_imported_slots, MaskPolicy, PropositionRecord,
    QueryLexicon, SlotExtractor, UmrError,
};

#[derive(Debug, Error)]
pub enum StageError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid data: {0}")]
    Validation(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self {
            StageError::Usage(_) => 1,
            StageError::Io { .. } => 2,
            StageError::Validation(_) => 3,
            StageError::Numeric(_) => 4,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        StageError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<SupervisionError> for StageError {
    fn from(e: SupervisionError) -> Self {
        StageError::Validation(e.to_string())
    }
}

impl From<SynthError> for StageError {
    fn from(e: SynthError) -> Self {
        StageError::Validation(e.to_string())
    }
}

impl From<GenPrepError> for StageError {
    fn from(e: GenPrepError) -> Self {
        StageError::Validation(e.to_string())
    }
}

impl From<EvidenceError> for StageError {
    fn from(e: EvidenceError) -> Self {
        StageError::Validation(e.to_string())
    }
}

impl From<UmrError> for StageError {
    fn from(e: UmrError) -> Self {
        StageError::Usage(e.to_string())
    }
}

impl From<RankerError> for StageError {
    fn from(e: RankerError) -> Self {
        match e {
            RankerError::Io(io) => StageError::Io {
                path: PathBuf::new(),
                source: io,
            },
            RankerError::BadConfig(msg) => StageError::Usage(msg),
            RankerError::NoPairs | RankerError::AllPairsSkipped(_) => {
                StageError::Numeric(e.to_string())
            }
            other => StageError::Validation(other.to_string()),
        }
    }
}

/// Flat-key JSON configuration. Every field has a default mirroring the
/// documented pipeline constants, so a config file only needs overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub gamma: f64,
    pub lambda: f64,
    pub seed: u64,
    pub granularity: Granularity,
    pub head: usize,
    pub tail: usize,
    pub word_budget: usize,
    pub redundancy_threshold: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lexrank_threshold: f64,
    pub damping: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub expansion_budget: usize,
    pub retrieval_pool: usize,
    pub length_target: usize,
    pub max_tokens: usize,
    pub recall_at: Vec<usize>,
    pub gammas: Vec<f64>,
    pub stem: bool,
    pub oracle_metric: Rouge2Metric,
    pub treat_verbs_as_slots: bool,
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            output_dir: PathBuf::from("out"),
            gamma: 0.0,
            lambda: 0.15,
            seed: 42,
            granularity: Granularity::Cluster,
            head: 20,
            tail: 20,
            word_budget: 250,
            redundancy_threshold: 0.6,
            learning_rate: 0.01,
            batch_size: 128,
            epochs: 3,
            lexrank_threshold: 0.1,
            damping: 0.85,
            epsilon: 1e-6,
            max_iterations: 100,
            expansion_budget: 100,
            retrieval_pool: 10,
            length_target: 250,
            max_tokens: 768,
            recall_at: vec![10],
            gammas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            stem: false,
            oracle_metric: Rouge2Metric::F1,
            treat_verbs_as_slots: false,
            workers: 0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, StageError> {
        let raw = fs::read_to_string(path).map_err(|e| StageError::io(path, e))?;
        let cfg: PipelineConfig = serde_json::from_str(&raw)
            .map_err(|e| StageError::Usage(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), StageError> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(StageError::Usage(msg.to_string()))
            }
        };
        check(
            (0.0..=1.0).contains(&self.gamma),
            "gamma must be in [0, 1]",
        )?;
        check(
            self.gammas.iter().all(|g| (0.0..=1.0).contains(g)),
            "all sweep gammas must be in [0, 1]",
        )?;
        check(self.lambda >= 0.0, "lambda must be non-negative")?;
        check(self.head + self.tail >= 1, "head + tail must be >= 1")?;
        check(self.word_budget >= 1, "word_budget must be >= 1")?;
        check(
            self.redundancy_threshold > 0.0 && self.redundancy_threshold <= 1.0,
            "redundancy_threshold must be in (0, 1]",
        )?;
        check(self.learning_rate > 0.0, "learning_rate must be positive")?;
        check(self.batch_size >= 1, "batch_size must be >= 1")?;
        check(self.epochs >= 1, "epochs must be >= 1")?;
        check(
            (0.0..1.0).contains(&self.lexrank_threshold),
            "lexrank_threshold must be in [0, 1)",
        )?;
        check(
            self.damping > 0.0 && self.damping < 1.0,
            "damping must be in (0, 1)",
        )?;
        check(self.epsilon > 0.0, "epsilon must be positive")?;
        check(self.max_iterations >= 1, "max_iterations must be >= 1")?;
        check(self.expansion_budget >= 1, "expansion_budget must be >= 1")?;
        check(self.retrieval_pool >= 1, "retrieval_pool must be >= 1")?;
        check(self.length_target >= 1, "length_target must be >= 1")?;
        check(self.max_tokens >= 1, "max_tokens must be >= 1")?;
        check(
            self.recall_at.iter().all(|&k| k >= 1),
            "recall_at entries must be >= 1",
        )?;
        Ok(())
    }

    pub fn sampling_policy(&self) -> SamplingPolicy {
        SamplingPolicy {
            granularity: self.granularity,
            head: self.head,
            tail: self.tail,
        }
    }

    pub fn mask_policy(&self) -> Result<MaskPolicy, StageError> {
        Ok(MaskPolicy::new(self.gamma, self.seed)?)
    }

    pub fn target_config(&self) -> TargetConfig {
        TargetConfig {
            lambda: self.lambda,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    pub fn centrality_config(&self) -> CentralityConfig {
        CentralityConfig {
            similarity_threshold: self.lexrank_threshold,
            damping: self.damping,
            epsilon: self.epsilon,
            max_iterations: self.max_iterations,
        }
    }

    pub fn extract_budget(&self) -> ExtractBudget {
        ExtractBudget {
            word_budget: self.word_budget,
            redundancy_threshold: self.redundancy_threshold,
        }
    }

    pub fn slot_extractor(&self) -> SlotExtractor {
        SlotExtractor::new(self.treat_verbs_as_slots)
    }
}

/// Input/output counts for the per-stage log line.
#[derive(Debug, Clone, Copy)]
pub struct StageReport {
    pub inputs: usize,
    pub outputs: usize,
}

fn log_stage(stage: &str, report: StageReport, out: &Path) {
    log::info!(
        "stage={stage} inputs={} outputs={} out={}",
        report.inputs,
        report.outputs,
        out.display()
    );
}

/// Read a JSONL file into typed records, reporting the offending line on
/// parse failure.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StageError> {
    let raw = fs::read_to_string(path).map_err(|e| StageError::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(line).map_err(|e| {
            StageError::Validation(format!("{} line {}: {e}", path.display(), lineno + 1))
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Write bytes atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StageError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| StageError::io(parent, e))?;
        }
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, bytes).map_err(|e| StageError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| StageError::io(path, e))?;
    Ok(())
}

/// Serialize records as JSONL and write atomically.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), StageError> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)
            .map_err(|e| StageError::Validation(format!("serialize: {e}")))?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>, StageError> {
    let records: Vec<CorpusRecord> = read_jsonl(path)?;
    for r in &records {
        r.validate()?;
    }
    let mut seen = std::collections::HashSet::new();
    for r in &records {
        if !seen.insert(r.cluster_id.as_str()) {
            return Err(StageError::Validation(format!(
                "duplicate cluster_id {} in {}",
                r.cluster_id,
                path.display()
            )));
        }
    }
    Ok(records)
}

/// One proxy query per corpus record (the `mask` stage output schema).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProxyQueryRecord {
    pub cluster_id: String,
    pub query_umr: String,
    pub mask_count: usize,
}

/// A real query aimed at one cluster.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub cluster_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub narrative: String,
}

/// Ranked sentences for one query or proxy query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedRecord {
    pub cluster_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
    pub query_umr: String,
    pub items: Vec<crate::ranker::RankedSentence>,
}

/// Budgeted extract for one query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractRecord {
    pub cluster_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
    pub sentences: Vec<String>,
}

/// Convert summaries into masked proxy queries.
pub fn stage_mask(
    cfg: &PipelineConfig,
    corpus_path: &Path,
    out: &Path,
    propositions: Option<&Path>,
) -> Result<StageReport, StageError> {
    let records = read_corpus(corpus_path)?;
    let extractor = cfg.slot_extractor();
    let policy = cfg.mask_policy()?;

    let imported: Option<HashMap<String, Vec<PropositionRecord>>> = match propositions {
        Some(p) => {
            let rows: Vec<PropositionRecord> = read_jsonl(p)?;
            let mut by_doc: HashMap<String, Vec<PropositionRecord>> = HashMap::new();
            for r in rows {
                by_doc.entry(r.doc_id.clone()).or_default().push(r);
            }
            Some(by_doc)
        }
        None => None,
    };

    let outputs: Vec<ProxyQueryRecord> = map_collect(&records, |record| {
        let sentences: Vec<_> = record.summary.iter().map(|s| tokenize(s)).collect();
        let record_policy = MaskPolicy {
            gamma: policy.gamma,
            seed: crate::supervision::derive_record_seed(policy.seed, &record.cluster_id),
        };
        let masked = match imported
            .as_ref()
            .and_then(|m| m.get(record.cluster_id.as_str()))
        {
            Some(rows) => {
                let (slots, rejected) = validate_imported_slots(&sentences, rows);
                for diag in rejected {
                    log::warn!("proposition import: {diag}");
                }
                mask_summary(&sentences, &slots, &record_policy)
            }
            None => {
                let slots = extractor.extract_all(&sentences);
                mask_summary(&sentences, &slots, &record_policy)
            }
        };
        let query_umr = render_umr(&masked);
        ProxyQueryRecord {
            cluster_id: record.cluster_id.clone(),
            mask_count: query_umr.matches(crate::text::MASK_TOKEN).count(),
            query_umr,
        }
    });

    write_jsonl(out, &outputs)?;
    let report = StageReport {
        inputs: records.len(),
        outputs: outputs.len(),
    };
    log_stage("mask", report, out);
    Ok(report)
}

/// Build training pairs; optionally split a dev set by cluster-id hash.
pub fn stage_pairs(
    cfg: &PipelineConfig,
    corpus_path: &Path,
    out: &Path,
    dev_out: Option<&Path>,
) -> Result<StageReport, StageError> {
    let records = read_corpus(corpus_path)?;
    let policy = cfg.sampling_policy();
    policy.validate()?;
    let mask_policy = cfg.mask_policy()?;
    let extractor = cfg.slot_extractor();
    let target_cfg = cfg.target_config();

    let built: Vec<Result<crate::supervision::BuiltPairs, SupervisionError>> =
        map_collect(&records, |record| {
            build_pairs(record, &policy, &mask_policy, &extractor, &target_cfg)
        });

    let mut train_pairs = Vec::new();
    let mut dev_pairs = Vec::new();
    for (record, result) in records.iter().zip(built) {
        let b = result?;
        for w in &b.warnings {
            log::warn!("{w}");
        }
        if dev_out.is_some() && is_dev_cluster(&record.cluster_id) {
            dev_pairs.extend(b.pairs);
        } else {
            train_pairs.extend(b.pairs);
        }
    }

    write_jsonl(out, &train_pairs)?;
    if let Some(dev_path) = dev_out {
        write_jsonl(dev_path, &dev_pairs)?;
    }
    let report = StageReport {
        inputs: records.len(),
        outputs: train_pairs.len() + dev_pairs.len(),
    };
    log_stage("pairs", report, out);
    Ok(report)
}

/// Train the regressor on a pair file and persist binary params.
pub fn stage_train(
    cfg: &PipelineConfig,
    pairs_path: &Path,
    params_out: &Path,
) -> Result<StageReport, StageError> {
    let pairs: Vec<TrainingPair> = read_jsonl(pairs_path)?;
    let outcome = train(&pairs, &cfg.train_config(), cfg.lambda, cfg.gamma)?;
    for e in &outcome.log {
        log::info!("epoch={} mean_mse={:.6}", e.epoch, e.mean_mse);
    }
    if let Some(parent) = params_out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| StageError::io(parent, e))?;
        }
    }
    outcome.params.save(params_out).map_err(|e| match e {
        RankerError::Io(io) => StageError::io(params_out, io),
        other => StageError::from(other),
    })?;
    let report = StageReport {
        inputs: pairs.len(),
        outputs: 1,
    };
    log_stage("train", report, params_out);
    Ok(report)
}

/// Where rank-stage queries come from.
pub enum QuerySource<'a> {
    /// Mask each record's own summary (reference-as-proxy-query mode).
    Proxy,
    /// Real queries from a file, masked through the query lexicon.
    File(&'a Path),
}

/// Load a query lexicon file, or fall back to the bundled default.
pub fn load_lexicon(path: Option<&Path>) -> Result<QueryLexicon, StageError> {
    match path {
        Some(p) => {
            let raw = fs::read_to_string(p).map_err(|e| StageError::io(p, e))?;
            QueryLexicon::parse(&raw)
                .map_err(|e| StageError::Validation(format!("{}: {e}", p.display())))
        }
        None => Ok(QueryLexicon::bundled()),
    }
}

struct RankTask {
    cluster_id: String,
    query_id: Option<String>,
    query_umr: String,
    sentences: Vec<String>,
}

fn rank_tasks(
    cfg: &PipelineConfig,
    records: &[CorpusRecord],
    source: &QuerySource,
    lexicon: &QueryLexicon,
) -> Result<Vec<RankTask>, StageError> {
    let by_id: HashMap<&str, &CorpusRecord> = records
        .iter()
        .map(|r| (r.cluster_id.as_str(), r))
        .collect();
    match source {
        QuerySource::Proxy => {
            let extractor = cfg.slot_extractor();
            let policy = cfg.mask_policy()?;
            Ok(map_collect(records, |record| {
                let (query_umr, _) = proxy_query(record, &extractor, &policy);
                RankTask {
                    cluster_id: record.cluster_id.clone(),
                    query_id: None,
                    query_umr,
                    sentences: record.all_sentences(),
                }
            }))
        }
        QuerySource::File(path) => {
            let queries: Vec<QueryRecord> = read_jsonl(path)?;
            queries
                .into_iter()
                .map(|q| {
                    let record = by_id.get(q.cluster_id.as_str()).ok_or_else(|| {
                        StageError::Validation(format!(
                            "query {}: unknown cluster_id {}",
                            q.query_id, q.cluster_id
                        ))
                    })?;
                    let title = q.title.as_deref().map(tokenize);
                    let narrative = tokenize(&q.narrative);
                    let masked = mask_query(title.as_ref(), &narrative, lexicon);
                    Ok(RankTask {
                        cluster_id: q.cluster_id.clone(),
                        query_id: Some(q.query_id.clone()),
                        query_umr: render_umr(&masked),
                        sentences: record.all_sentences(),
                    })
                })
                .collect()
        }
    }
}

/// Rank evidence with the trained regressor.
pub fn stage_rank(
    cfg: &PipelineConfig,
    corpus_path: &Path,
    params_path: &Path,
    source: QuerySource,
    lexicon_path: Option<&Path>,
    out: &Path,
) -> Result<StageReport, StageError> {
    let records = read_corpus(corpus_path)?;
    let params = RegressorParams::load(params_path).map_err(|e| match e {
        RankerError::Io(io) => StageError::io(params_path, io),
        other => StageError::from(other),
    })?;
    let lexicon = load_lexicon(lexicon_path)?;
    let tasks = rank_tasks(cfg, &records, &source, &lexicon)?;

    let outputs: Vec<RankedRecord> = map_collect(&tasks, |task| RankedRecord {
        cluster_id: task.cluster_id.clone(),
        query_id: task.query_id.clone(),
        query_umr: task.query_umr.clone(),
        items: rank_evidence(&params, &task.query_umr, &task.sentences).items,
    });

    write_jsonl(out, &outputs)?;
    let report = StageReport {
        inputs: tasks.len(),
        outputs: outputs.len(),
    };
    log_stage("rank", report, out);
    Ok(report)
}

/// Rank with a non-learned baseline instead of the regressor.
pub fn stage_rank_baseline(
    cfg: &PipelineConfig,
    corpus_path: &Path,
    method: BaselineMethod,
    source: QuerySource,
    lexicon_path: Option<&Path>,
    out: &Path,
) -> Result<StageReport, StageError> {
    let records = read_corpus(corpus_path)?;
    let by_id: HashMap<&str, &CorpusRecord> = records
        .iter()
        .map(|r| (r.cluster_id.as_str(), r))
        .collect();
    let lexicon = load_lexicon(lexicon_path)?;
    let tasks = rank_tasks(cfg, &records, &source, &lexicon)?;
    let outputs: Vec<RankedRecord> = map_collect(&tasks, |task| {
        let record = by_id[task.cluster_id.as_str()];
        RankedRecord {
            cluster_id: task.cluster_id.clone(),
            query_id: task.query_id.clone(),
            query_umr: task.query_umr.clone(),
            items: crate::evidence::baseline_rank(method, &task.query_umr, &record.documents)
                .items,
        }
    });
    write_jsonl(out, &outputs)?;
    let report = StageReport {
        inputs: tasks.len(),
        outputs: outputs.len(),
    };
    log_stage("rank-baseline", report, out);
    Ok(report)
}

/// Emit the external score-exchange request file for all rank tasks.
pub fn stage_emit_requests(
    cfg: &PipelineConfig,
    corpus_path: &Path,
    source: QuerySource,
    lexicon_path: Option<&Path>,
    out: &Path,
) -> Result<StageReport, StageError> {
    let records = read_corpus(corpus_path)?;
    let lexicon = load_lexicon(lexicon_path)?;
    let tasks = rank_tasks(cfg, &records, &source, &lexicon)?;
    let mut requests = Vec::new();
    let mut id = 0u64;
    for task in &tasks {
        for sentence in &task.sentences {
            requests.push(ScoreRequest {
                id,
                query: task.query_umr.clone(),
                sentence: sentence.clone(),
            });
            id += 1;
        }
    }
    write_jsonl(out, &requests)?;
    let report = StageReport {
        inputs: tasks.len(),
        outputs: requests.len(),
    };
    log_stage("emit-requests", report, out);
    Ok(report)
}

/// Rank using externally supplied scores (the response side of the
/// exchange protocol). Request ids are re-derived deterministically.
pub fn stage_rank_external(
    cfg: &PipelineConfig,
    corpus_path: &Path,
    source: QuerySource,
    lexicon_path: Option<&Path>,
    scores_path: &Path,
    out: &Path,
) -> Result<StageReport, StageError> {
    let records = read_corpus(corpus_path)?;
    let lexicon = load_lexicon(lexicon_path)?;
    let tasks = rank_tasks(cfg, &records, &source, &lexicon)?;
    let responses: Vec<ScoreResponse> = read_jsonl(scores_path)?;
    let scores = crate::ranker::collect_scores(&responses)?;

    let mut outputs = Vec::with_capacity(tasks.len());
    let mut id = 0u64;
    for task in &tasks {
        let requests: Vec<ScoreRequest> = task
            .sentences
            .iter()
            .map(|sentence| {
                let r = ScoreRequest {
                    id,
                    query: task.query_umr.clone(),
                    sentence: sentence.clone(),
                };
                id += 1;
                r
            })
            .collect();
        let ranked: RankedEvidence = rank_with_external_scores(&requests, &scores)?;
        outputs.push(RankedRecord {
            cluster_id: task.cluster_id.clone(),
            query_id: task.query_id.clone(),
            query_umr: task.query_umr.clone(),
            items: ranked.items,
        });
    }
    write_jsonl(out, &outputs)?;
    let report = StageReport {
        inputs: tasks.len(),
        outputs: outputs.len(),
    };
    log_stage("rank-external", report, out);
    Ok(report)
}

/// Expand short query narratives with central cluster sentences.
pub fn stage_expand(
    cfg: &PipelineConfig,
    queries_path: &Path,
    corpus_path: &Path,
    out: &Path,
) -> Result<StageReport, StageError> {
    let records = read_corpus(corpus_path)?;
    let by_id: HashMap<&str, &CorpusRecord> = records
        .iter()
        .map(|r| (r.cluster_id.as_str(), r))
        .collect();
    let queries: Vec<QueryRecord> = read_jsonl(queries_path)?;
    let centrality = cfg.centrality_config();

    let expanded = queries
        .iter()
        .map(|q| {
            let record = by_id.get(q.cluster_id.as_str()).ok_or_else(|| {
                StageError::Validation(format!(
                    "query {}: unknown cluster_id {}",
                    q.query_id, q.cluster_id
                ))
            })?;
            let sentences = record.all_sentences();
            Ok(QueryRecord {
                narrative: expand_query(
                    &q.narrative,
                    &sentences,
                    cfg.expansion_budget,
                    &centrality,
                ),
                ..q.clone()
            })
        })
        .collect::<Result<Vec<_>, StageError>>()?;

    write_jsonl(out, &expanded)?;
    let report = StageReport {
        inputs: queries.len(),
        outputs: expanded.len(),
    };
    log_stage("expand", report, out);
    Ok(report)
}

/// Assemble budgeted extracts from rankings.
pub fn stage_extract(
    cfg: &PipelineConfig,
    ranked_path: &Path,
    out: &Path,
) -> Result<StageReport, StageError> {
    let ranked: Vec<RankedRecord> = read_jsonl(ranked_path)?;
    let budget = cfg.extract_budget();
    let outputs: Vec<ExtractRecord> = map_collect(&ranked, |r| {
        let evidence = RankedEvidence {
            items: r.items.clone(),
        };
        ExtractRecord {
            cluster_id: r.cluster_id.clone(),
            query_id: r.query_id.clone(),
            sentences: assemble_extract(&evidence, &budget).sentences,
        }
    });
    write_jsonl(out, &outputs)?;
    let report = StageReport {
        inputs: ranked.len(),
        outputs: outputs.len(),
    };
    log_stage("extract", report, out);
    Ok(report)
}

/// What the eval stage scores: budgeted extracts, or summaries coming
/// back from an external generator as `{id, summary}` JSONL.
pub enum EvalInput<'a> {
    Extracts(&'a Path),
    Generated(&'a Path),
}

/// Score extracts or generated summaries (and optionally rankings)
/// against corpus summaries.
pub fn stage_eval(
    cfg: &PipelineConfig,
    input: EvalInput,
    corpus_path: &Path,
    ranked_path: Option<&Path>,
    report_out: &Path,
    csv_out: Option<&Path>,
) -> Result<StageReport, StageError> {
    let records = read_corpus(corpus_path)?;
    let references: HashMap<&str, Vec<crate::text::TokenSeq>> = records
        .iter()
        .map(|r| {
            (
                r.cluster_id.as_str(),
                vec![tokenize(&r.summary.join(" "))],
            )
        })
        .collect();
    let extracts: Vec<ExtractRecord> = match input {
        EvalInput::Extracts(path) => read_jsonl(path)?,
        EvalInput::Generated(path) => {
            let generated: Vec<crate::genprep::GeneratedSummary> = read_jsonl(path)?;
            generated
                .into_iter()
                .map(|g| ExtractRecord {
                    cluster_id: g.id,
                    query_id: None,
                    sentences: crate::text::split_sentences(&g.summary),
                })
                .collect()
        }
    };
    let ranked: HashMap<(String, Option<String>), RankedRecord> = match ranked_path {
        Some(p) => read_jsonl::<RankedRecord>(p)?
            .into_iter()
            .map(|r| ((r.cluster_id.clone(), r.query_id.clone()), r))
            .collect(),
        None => HashMap::new(),
    };

    let mut queries = Vec::with_capacity(extracts.len());
    for e in &extracts {
        let refs = references.get(e.cluster_id.as_str()).ok_or_else(|| {
            StageError::Validation(format!("extract: unknown cluster_id {}", e.cluster_id))
        })?;
        let scores = evaluate_extract(&e.sentences, refs, cfg.stem)?;
        let mut q = QueryEval {
            cluster_id: e.cluster_id.clone(),
            query_id: e.query_id.clone(),
            r1: scores.r1,
            r2: scores.r2,
            su4: scores.su4,
            recall_at: Default::default(),
        };
        if let Some(r) = ranked.get(&(e.cluster_id.clone(), e.query_id.clone())) {
            let evidence = RankedEvidence {
                items: r.items.clone(),
            };
            for &k in &cfg.recall_at {
                q.recall_at.insert(k, recall_at_k(&evidence, refs, k)?);
            }
        }
        queries.push(q);
    }

    let report = EvalReport::from_queries(queries);
    let json = serde_json::to_vec_pretty(&report)
        .map_err(|e| StageError::Validation(format!("serialize report: {e}")))?;
    write_atomic(report_out, &json)?;
    if let Some(csv_path) = csv_out {
        write_atomic(csv_path, report.to_csv().as_bytes())?;
    }
    let stage_report = StageReport {
        inputs: extracts.len(),
        outputs: report.query_count,
    };
    log_stage("eval", stage_report, report_out);
    Ok(stage_report)
}

/// Build a synthetic multi-document corpus from single-document records.
pub fn stage_synth(
    cfg: &PipelineConfig,
    corpus_path: &Path,
    out: &Path,
) -> Result<StageReport, StageError> {
    let records = read_corpus(corpus_path)?;
    let clusters = build_synthetic_corpus(
        &records,
        cfg.retrieval_pool,
        cfg.length_target,
        cfg.redundancy_threshold,
    )?;
    let outputs: Vec<CorpusRecord> = clusters.iter().map(|c| c.to_corpus_record()).collect();
    write_jsonl(out, &outputs)?;
    let report = StageReport {
        inputs: records.len(),
        outputs: outputs.len(),
    };
    log_stage("synth", report, out);
    Ok(report)
}

/// Prepare generator inputs. Evidence comes from a ranking when given,
/// otherwise from oracle ordering against the reference summary.
pub fn stage_genprep(
    cfg: &PipelineConfig,
    corpus_path: &Path,
    ranked_path: Option<&Path>,
    query_guided: bool,
    own_length: bool,
    out: &Path,
) -> Result<StageReport, StageError> {
    let records = read_corpus(corpus_path)?;
    let lengths: Vec<usize> = records
        .iter()
        .map(|r| tokenize(&r.summary.join(" ")).word_count)
        .collect();
    let bins = build_length_bins(&lengths)?;

    let by_id: HashMap<&str, &CorpusRecord> = records
        .iter()
        .map(|r| (r.cluster_id.as_str(), r))
        .collect();
    let extractor = cfg.slot_extractor();
    let mask_policy = cfg.mask_policy()?;

    let mut outputs: Vec<GeneratorInput> = Vec::new();
    match ranked_path {
        Some(p) => {
            let ranked: Vec<RankedRecord> = read_jsonl(p)?;
            for r in &ranked {
                let record = by_id.get(r.cluster_id.as_str()).ok_or_else(|| {
                    StageError::Validation(format!("ranked: unknown cluster_id {}", r.cluster_id))
                })?;
                let evidence: Vec<String> =
                    r.items.iter().map(|i| i.sentence.clone()).collect();
                let requested = if own_length {
                    tokenize(&record.summary.join(" ")).word_count
                } else {
                    cfg.length_target
                };
                let id = r.query_id.clone().unwrap_or_else(|| r.cluster_id.clone());
                outputs.push(prepare_generator_input(
                    &id,
                    &evidence,
                    query_guided.then_some(r.query_umr.as_str()),
                    requested,
                    &bins,
                    cfg.max_tokens,
                ));
            }
        }
        None => {
            for record in &records {
                let reference = tokenize(&record.summary.join(" "));
                let evidence = oracle_order(
                    &record.all_sentences(),
                    &reference,
                    cfg.oracle_metric,
                );
                let proxy = query_guided
                    .then(|| proxy_query(record, &extractor, &mask_policy).0);
                let requested = if own_length {
                    reference.word_count
                } else {
                    cfg.length_target
                };
                outputs.push(prepare_generator_input(
                    &record.cluster_id,
                    &evidence,
                    proxy.as_deref(),
                    requested,
                    &bins,
                    cfg.max_tokens,
                ));
            }
        }
    }

    write_jsonl(out, &outputs)?;
    let report = StageReport {
        inputs: records.len(),
        outputs: outputs.len(),
    };
    log_stage("genprep", report, out);
    Ok(report)
}

/// One row of the gamma-sweep CSV.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub pearson_r: f64,
    pub mse: f64,
}

/// Regression fit on held-out pairs per reveal ratio: for each gamma,
/// build pairs (train/dev split by cluster hash), train, and measure
/// held-out Pearson r and MSE.
pub fn gamma_sweep(
    cfg: &PipelineConfig,
    records: &[CorpusRecord],
) -> Result<Vec<SweepRow>, StageError> {
    let policy = cfg.sampling_policy();
    policy.validate()?;
    let extractor = cfg.slot_extractor();
    let target_cfg = cfg.target_config();

    let mut rows = Vec::with_capacity(cfg.gammas.len());
    for &gamma in &cfg.gammas {
        let mask_policy = MaskPolicy::new(gamma, cfg.seed)?;
        let mut train_pairs = Vec::new();
        let mut dev_pairs = Vec::new();
        for record in records {
            let b = build_pairs(record, &policy, &mask_policy, &extractor, &target_cfg)?;
            if is_dev_cluster(&record.cluster_id) {
                dev_pairs.extend(b.pairs);
            } else {
                train_pairs.extend(b.pairs);
            }
        }
        if train_pairs.is_empty() || dev_pairs.is_empty() {
            return Err(StageError::Validation(format!(
                "gamma sweep needs non-empty train and dev splits (got {} train, {} dev)",
                train_pairs.len(),
                dev_pairs.len()
            )));
        }
        let outcome = train(&train_pairs, &cfg.train_config(), cfg.lambda, gamma)?;
        let predictions: Vec<f64> = map_collect(&dev_pairs, |p| {
            crate::ranker::predict(&outcome.params, &p.query_umr, &p.sentence)
        });
        let targets: Vec<f64> = dev_pairs.iter().map(|p| p.target).collect();
        let mse = predictions
            .iter()
            .zip(&targets)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / targets.len() as f64;
        rows.push(SweepRow {
            gamma,
            pearson_r: pearson(&predictions, &targets),
            mse,
        });
    }
    Ok(rows)
}

/// Run the gamma sweep and write the CSV.
pub fn stage_gamma_sweep(
    cfg: &PipelineConfig,
    corpus_path: &Path,
    out: &Path,
) -> Result<StageReport, StageError> {
    let records = read_corpus(corpus_path)?;
    let rows = gamma_sweep(cfg, &records)?;
    let mut csv = String::from("gamma,pearson_r,mse\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{:.6},{:.6}\n",
            row.gamma, row.pearson_r, row.mse
        ));
    }
    write_atomic(out, csv.as_bytes())?;
    let report = StageReport {
        inputs: records.len(),
        outputs: rows.len(),
    };
    log_stage("gamma-sweep", report, out);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_validate() {
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn config_rejects_bad_values() {
        let cfg = PipelineConfig {
            gamma: 1.5,
            ..PipelineConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(StageError::Usage(_))));

        let cfg = PipelineConfig {
            epochs: 0,
            ..PipelineConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(StageError::Usage(_))));
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let raw = r#"{"gamma": 0.5, "not_a_key": 1}"#;
        let parsed: Result<PipelineConfig, _> = serde_json::from_str(raw);
        assert!(parsed.is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(StageError::Usage("x".into()).exit_code(), 1);
        assert_eq!(
            StageError::io(Path::new("p"), std::io::Error::other("x")).exit_code(),
            2
        );
        assert_eq!(StageError::Validation("x".into()).exit_code(), 3);
        assert_eq!(StageError::Numeric("x".into()).exit_code(), 4);
    }

    #[test]
    fn jsonl_roundtrip_atomic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        let records = vec![
            ProxyQueryRecord {
                cluster_id: "a".into(),
                query_umr: "[MASK] x".into(),
                mask_count: 1,
            },
            ProxyQueryRecord {
                cluster_id: "b".into(),
                query_umr: "y".into(),
                mask_count: 0,
            },
        ];
        write_jsonl(&path, &records).unwrap();
        let back: Vec<ProxyQueryRecord> = read_jsonl(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].cluster_id, "a");
        // No temp file left behind.
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn jsonl_parse_error_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(&path, "{\"cluster_id\": \"a\", \"query_umr\": \"q\", \"mask_count\": 0}\nnot json\n").unwrap();
        let err = read_jsonl::<ProxyQueryRecord>(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_jsonl::<ProxyQueryRecord>(Path::new("/nonexistent/x.jsonl")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
