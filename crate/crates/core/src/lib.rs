//! Building blocks for a fully automated preference-data pipeline that
//! targets factual consistency in summarisation.
//!
//! The flow is: decode two lexically similar summaries per source document,
//! score both with an ensemble of weak factuality metrics, turn every score
//! difference into a sign, keep only the pairs on which all metrics agree,
//! and optimise the summariser on the surviving preferences with a DPO
//! objective.
//!
//! Modules:
//! - [`types`] and [`jsonl`]: the records exchanged between stages and their
//!   line-delimited JSON persistence.
//! - [`lm`]: the language-model contract, a small differentiable reference
//!   model and an HTTP client for external logits servers.
//! - [`decoding`]: beam search, k-th best extraction, greedy and seeded
//!   temperature sampling, and similar-pair construction.
//! - [`scorers`]: the metric ensemble (SBERTScore, SummaC, AlignScore, FactCC,
//!   BARTScore, ROUGE-L) on top of pluggable embedding and NLI providers.
//! - [`annotation`]: sign labels, the agreement filter, pair similarity and
//!   the beam-always-wins baseline labeller.
//! - [`dpo`]: loss, analytic gradient, trainer and preference accuracy.
//! - [`corpus`]: synthetic corpora for desk-scale experiments.

pub mod annotation;
pub mod corpus;
pub mod decoding;
pub mod dpo;
pub mod jsonl;
pub mod lm;
pub mod remote;
pub mod scorers;
pub mod types;

pub use annotation::{Consensus, FilterReport, TiePolicy};
pub use decoding::{BeamSet, Hypothesis, PairOutcome, Pairing, PairingConfig, SkipReason};
pub use dpo::{DpoConfig, DpoMode, TracePoint, TrainTrace};
pub use lm::{LanguageModel, TokenId, ToyLm, ToyLmShape, Vocab, EOS_TOKEN};
pub use types::{
    Document, PreferenceRecord, ScoredPair, Sign, Strategy, SummaryCandidate, SummaryPair,
};
