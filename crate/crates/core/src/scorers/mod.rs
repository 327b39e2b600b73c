//! The weak-metric ensemble.
//!
//! Every metric implements [`Scorer`]: a deterministic `score(summary,
//! source)` where higher means more factually consistent. Only the
//! aggregation math lives here; the embedding, NLI and language-model
//! backbones are supplied through providers.

mod align;
mod bart;
pub mod providers;
mod rouge;
mod sbert;
mod summac;
pub mod text;

use std::sync::Arc;

pub use align::{align_score, chunk_sentences, factcc_score};
pub use bart::{bart_score, TokenWeights};
pub use providers::{EmbeddingProvider, NliProvider, ProviderError};
pub use rouge::{lcs_len, rouge_l};
pub use sbert::{cosine, sbert_score};
pub use summac::{histogram_row, summac_score, SummacConv};
pub use text::{split_sentences, words, SentenceSplit};

use crate::lm::{LanguageModel, LmError, Vocab, VocabError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("reference text has no words")]
    EmptyReference,
    #[error("embedding of `{text}` is the zero vector; cosine is undefined")]
    ZeroEmbedding { text: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid scorer configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

impl ScoreError {
    /// True when the failure came from a remote backend.
    pub fn is_remote(&self) -> bool {
        matches!(self, ScoreError::Provider(p) if p.is_remote())
            || matches!(self, ScoreError::Lm(LmError::Remote(_)))
    }
}

/// A factuality metric `S_m(summary, source)`.
pub trait Scorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, summary: &str, source: &str) -> Result<f64, ScoreError>;
}

/// Mean over summary sentences of the best cosine against source sentences.
pub struct SbertScorer {
    pub embedder: Arc<dyn EmbeddingProvider>,
}

impl Scorer for SbertScorer {
    fn name(&self) -> &str {
        "sbert"
    }

    fn score(&self, summary: &str, source: &str) -> Result<f64, ScoreError> {
        sbert_score(summary, source, self.embedder.as_ref())
    }
}

/// Sentence-level NLI matrix, binned per summary sentence, aggregated by a
/// convolution over bins.
pub struct SummacScorer {
    pub nli: Arc<dyn NliProvider>,
    pub conv: SummacConv,
}

impl Scorer for SummacScorer {
    fn name(&self) -> &str {
        "summac"
    }

    fn score(&self, summary: &str, source: &str) -> Result<f64, ScoreError> {
        summac_score(summary, source, self.nli.as_ref(), &self.conv)
    }
}

/// Mean over summary chunks of the best alignment against source chunks.
pub struct AlignScorer {
    pub alignment: Arc<dyn NliProvider>,
    pub chunk_size: usize,
}

impl Scorer for AlignScorer {
    fn name(&self) -> &str {
        "align"
    }

    fn score(&self, summary: &str, source: &str) -> Result<f64, ScoreError> {
        align_score(summary, source, self.alignment.as_ref(), self.chunk_size)
    }
}

/// One NLI call on the whole texts.
pub struct FactccScorer {
    pub nli: Arc<dyn NliProvider>,
}

impl Scorer for FactccScorer {
    fn name(&self) -> &str {
        "factcc"
    }

    fn score(&self, summary: &str, source: &str) -> Result<f64, ScoreError> {
        factcc_score(summary, source, self.nli.as_ref())
    }
}

/// Weighted summary log-likelihood under a language model. Texts are
/// tokenised with `vocab`; the summary gets an EOS appended.
pub struct BartScorer {
    pub lm: Arc<dyn LanguageModel>,
    pub vocab: Vocab,
    pub weights: TokenWeights,
}

impl Scorer for BartScorer {
    fn name(&self) -> &str {
        "bart"
    }

    fn score(&self, summary: &str, source: &str) -> Result<f64, ScoreError> {
        let source = self.vocab.encode(source)?;
        let summary = self.vocab.encode_summary(summary)?;
        bart_score(self.lm.as_ref(), &source, &summary, &self.weights)
    }
}

/// ROUGE-L of the summary against the source as reference.
pub struct RougeScorer;

impl Scorer for RougeScorer {
    fn name(&self) -> &str {
        "rouge_l"
    }

    fn score(&self, summary: &str, source: &str) -> Result<f64, ScoreError> {
        rouge_l(summary, source)
    }
}
