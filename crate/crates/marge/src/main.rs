//! Single-binary pipeline CLI. Stages read and write JSONL; numeric
//! parameters come from a JSON config file with per-flag overrides.
//! Exit codes: 1 usage, 2 I/O, 3 data validation, 4 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use marge::evidence::BaselineMethod;
use marge::pipeline::{
    stage_emit_requests, stage_eval, stage_expand, stage_extract, stage_gamma_sweep, stage_genprep,
    stage_mask, stage_pairs, stage_rank, stage_rank_baseline, stage_rank_external, stage_synth,
    stage_train, EvalInput, PipelineConfig, QuerySource, StageError,
};

#[derive(Parser)]
#[command(
    name = "marge",
    version,
    about = "Query-focused summarization pipeline: proxy queries, evidence ranking, extraction"
)]
struct Cli {
    /// JSON config file; flags override individual values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for data-parallel stages (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Reveal ratio for proxy-query masking.
    #[arg(long, global = true)]
    gamma: Option<f64>,

    /// RNG seed shared by all seeded stages.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct MaskArgs {
    /// Corpus JSONL (cluster_id, documents, summary).
    #[arg(long)]
    corpus: PathBuf,
    /// Output proxy-query JSONL.
    #[arg(long)]
    out: PathBuf,
    /// Optional externally produced proposition spans (JSONL).
    #[arg(long)]
    propositions: Option<PathBuf>,
}

#[derive(Args)]
struct PairsArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Output training-pair JSONL.
    #[arg(long)]
    out: PathBuf,
    /// When set, dev-split pairs (by cluster-id hash) go here instead.
    #[arg(long)]
    dev_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training-pair JSONL.
    #[arg(long)]
    pairs: PathBuf,
    /// Output binary params file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Trained params (omit when using --baseline or --external-scores).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Real queries JSONL; omitted = reference-as-proxy-query mode.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Rank with a non-learned baseline: termfreq or lead.
    #[arg(long)]
    baseline: Option<String>,
    /// Write the score-exchange request JSONL and stop.
    #[arg(long)]
    emit_requests: Option<PathBuf>,
    /// Rank using external scores (response JSONL of {id, score}).
    #[arg(long)]
    external_scores: Option<PathBuf>,
    /// Query-word lexicon file (default: bundled lexicon).
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExpandArgs {
    /// Queries JSONL to expand.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Word budget for appended narrative sentences.
    #[arg(long)]
    budget: Option<usize>,
}

#[derive(Args)]
struct ExtractArgs {
    /// Ranked JSONL from the rank stage.
    #[arg(long)]
    ranked: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Extract JSONL to score.
    #[arg(long, conflicts_with = "generated")]
    extracts: Option<PathBuf>,
    /// Generated summaries ({id, summary} JSONL) to score instead.
    #[arg(long)]
    generated: Option<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    /// Ranked JSONL; enables recall@k columns.
    #[arg(long)]
    ranked: Option<PathBuf>,
    /// Output report JSON.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV mirror of the report.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Single-document corpus JSONL.
    #[arg(long)]
    corpus: PathBuf,
    /// Output synthetic multi-document corpus JSONL.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenPrepArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Ranked JSONL; omitted = oracle ordering against the reference.
    #[arg(long)]
    ranked: Option<PathBuf>,
    /// Prepend the query UMR to the generator input.
    #[arg(long)]
    query_guided: bool,
    /// Request each record's own summary length instead of length_target.
    #[arg(long)]
    own_length: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GammaSweepArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Output CSV of (gamma, pearson_r, mse).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Convert corpus summaries into masked proxy queries.
    Mask(MaskArgs),
    /// Build (proxy query, sentence, target) training pairs.
    Pairs(PairsArgs),
    /// Train the evidence regressor on pairs.
    Train(TrainArgs),
    /// Rank cluster sentences for queries or proxy queries.
    Rank(RankArgs),
    /// Expand short query narratives with central cluster sentences.
    Expand(ExpandArgs),
    /// Assemble budgeted extracts from rankings.
    Extract(ExtractArgs),
    /// Score extracts (and rankings) against reference summaries.
    Eval(EvalArgs),
    /// Build a synthetic multi-document corpus from single-doc records.
    Synth(SynthArgs),
    /// Prepare controllable generator inputs.
    Genprep(GenPrepArgs),
    /// Sweep the reveal ratio and report held-out fit per gamma.
    GammaSweep(GammaSweepArgs),
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, StageError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(g) = cli.gamma {
        cfg.gamma = g;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(feature = "parallel")]
fn init_workers(workers: usize) {
    if workers > 0 {
        // Ignore failure: the global pool can only be set once.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
}

#[cfg(not(feature = "parallel"))]
fn init_workers(_workers: usize) {}

fn run(cli: &Cli) -> Result<(), StageError> {
    let cfg = load_config(cli)?;
    init_workers(cfg.workers);

    match &cli.command {
        Command::Mask(a) => {
            stage_mask(&cfg, &a.corpus, &a.out, a.propositions.as_deref())?;
        }
        Command::Pairs(a) => {
            stage_pairs(&cfg, &a.corpus, &a.out, a.dev_out.as_deref())?;
        }
        Command::Train(a) => {
            stage_train(&cfg, &a.pairs, &a.out)?;
        }
        Command::Rank(a) => {
            let source = match &a.queries {
                Some(q) => QuerySource::File(q),
                None => QuerySource::Proxy,
            };
            if let Some(req_out) = &a.emit_requests {
                stage_emit_requests(&cfg, &a.corpus, source, a.lexicon.as_deref(), req_out)?;
                return Ok(());
            }
            let out = a.out.as_ref().ok_or_else(|| {
                StageError::Usage("rank: --out is required unless --emit-requests".into())
            })?;
            if let Some(scores) = &a.external_scores {
                stage_rank_external(&cfg, &a.corpus, source, a.lexicon.as_deref(), scores, out)?;
            } else if let Some(name) = &a.baseline {
                let method: BaselineMethod = name
                    .parse()
                    .map_err(|e: marge::evidence::EvidenceError| StageError::Usage(e.to_string()))?;
                stage_rank_baseline(&cfg, &a.corpus, method, source, a.lexicon.as_deref(), out)?;
            } else {
                let params = a.params.as_ref().ok_or_else(|| {
                    StageError::Usage(
                        "rank: --params is required unless --baseline or --external-scores".into(),
                    )
                })?;
                stage_rank(&cfg, &a.corpus, params, source, a.lexicon.as_deref(), out)?;
            }
        }
        Command::Expand(a) => {
            let mut cfg = cfg.clone();
            if let Some(b) = a.budget {
                cfg.expansion_budget = b;
                cfg.validate()?;
            }
            stage_expand(&cfg, &a.queries, &a.corpus, &a.out)?;
        }
        Command::Extract(a) => {
            stage_extract(&cfg, &a.ranked, &a.out)?;
        }
        Command::Eval(a) => {
            let input = match (&a.extracts, &a.generated) {
                (Some(e), None) => EvalInput::Extracts(e),
                (None, Some(g)) => EvalInput::Generated(g),
                _ => {
                    return Err(StageError::Usage(
                        "eval: exactly one of --extracts or --generated is required".into(),
                    ))
                }
            };
            stage_eval(
                &cfg,
                input,
                &a.corpus,
                a.ranked.as_deref(),
                &a.out,
                a.csv.as_deref(),
            )?;
        }
        Command::Synth(a) => {
            stage_synth(&cfg, &a.corpus, &a.out)?;
        }
        Command::Genprep(a) => {
            stage_genprep(
                &cfg,
                &a.corpus,
                a.ranked.as_deref(),
                a.query_guided,
                a.own_length,
                &a.out,
            )?;
        }
        Command::GammaSweep(a) => {
            stage_gamma_sweep(&cfg, &a.corpus, &a.out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own help/version output with status 0.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
