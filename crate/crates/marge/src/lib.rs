//! Query modeling for query-focused summarization without query-labeled
//! training data.
//!
//! Generic document/summary corpora are converted into masked proxy
//! queries and ROUGE-supervised training pairs; a hashed-feature linear
//! regressor ranks evidence sentences; further stages expand short
//! queries, assemble budgeted extracts, build synthetic multi-document
//! clusters, and prepare controllable inputs for an external abstractive
//! generator. The `marge` binary wires the stages into a JSONL pipeline.
//!
//! By default the per-record work runs data-parallel on rayon; build
//! with `--no-default-features` for a fully sequential library.

pub mod evidence;
pub mod expansion;
pub mod genprep;
pub mod pipeline;
pub mod ranker;
pub mod rouge;
pub mod stem;
pub mod supervision;
pub mod synth;
pub mod text;
pub mod umr;

mod exec;

pub use text::{tokenize, TokenSeq};
