//! Embedding and NLI providers behind the metric ensemble.
//!
//! Mock providers are deterministic pure functions for tests and desk-scale
//! runs. Remote providers speak the sidecar protocol:
//!
//! ```text
//! POST /v1/embed {"texts": [..]}                       -> {"embeddings": [[..], ..]}
//! POST /v1/nli   {"premises": [..], "hypotheses": [..]} -> {"scores": [[..], ..]}
//! ```
//!
//! NLI score matrices are row-major premises x hypotheses, entries in [0, 1].

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::text::words;
use crate::remote::{HttpClient, RemoteConfig, RemoteError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("provider called with no inputs")]
    EmptyInput,
    #[error(transparent)]
    Remote(#[from] RemoteError),
    #[error("provider returned malformed output: {0}")]
    Malformed(String),
}

impl ProviderError {
    pub fn is_remote(&self) -> bool {
        matches!(self, ProviderError::Remote(_))
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

pub trait NliProvider: Send + Sync {
    /// Entailment of each hypothesis by each premise, `premises x hypotheses`.
    fn nli(&self, premises: &[String], hypotheses: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

/// Checks that `embeddings` holds `n` finite vectors of one dimension.
pub fn validate_embeddings(embeddings: &[Vec<f64>], n: usize) -> Result<(), String> {
    if embeddings.len() != n {
        return Err(format!("expected {n} embeddings, got {}", embeddings.len()));
    }
    if let Some(first) = embeddings.first() {
        if first.is_empty() {
            return Err("embeddings must have positive dimension".into());
        }
        if let Some(i) = embeddings.iter().position(|e| e.len() != first.len()) {
            return Err(format!(
                "embedding {i} has dimension {}, expected {}",
                embeddings[i].len(),
                first.len()
            ));
        }
    }
    if embeddings.iter().flatten().any(|v| !v.is_finite()) {
        return Err("embedding values must be finite".into());
    }
    Ok(())
}

/// Checks an `rows x cols` score matrix with entries in [0, 1].
pub fn validate_scores(scores: &[Vec<f64>], rows: usize, cols: usize) -> Result<(), String> {
    if scores.len() != rows {
        return Err(format!("expected {rows} rows, got {}", scores.len()));
    }
    for (i, row) in scores.iter().enumerate() {
        if row.len() != cols {
            return Err(format!("row {i} has {} columns, expected {cols}", row.len()));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(format!("score {v} in row {i} is outside [0, 1]"));
        }
    }
    Ok(())
}

fn word_seed(word: &str) -> u64 {
    // FNV-1a
    word.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Bag-of-words embedding: the sum of per-word vectors with entries in
/// `[0, 1)`, each drawn from a ChaCha8 stream seeded by the word's FNV-1a
/// hash. Non-negative, so cosine similarities lie in [0, 1]; a text with no
/// words embeds to the zero vector.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: 32 }
    }
}

impl HashEmbedder {
    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for w in words(text) {
            let mut rng = ChaCha8Rng::seed_from_u64(word_seed(&w));
            for x in &mut v {
                *x += rng.random::<f64>();
            }
        }
        v
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Lexical entailment proxy: the fraction of hypothesis words present in
/// the premise (1.0 for a hypothesis without words).
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalNli;

impl LexicalNli {
    pub fn score(premise: &str, hypothesis: &str) -> f64 {
        let premise: HashSet<String> = words(premise).into_iter().collect();
        let hyp = words(hypothesis);
        if hyp.is_empty() {
            return 1.0;
        }
        hyp.iter().filter(|w| premise.contains(*w)).count() as f64 / hyp.len() as f64
    }
}

impl NliProvider for LexicalNli {
    fn nli(&self, premises: &[String], hypotheses: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        if premises.is_empty() || hypotheses.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        Ok(premises
            .iter()
            .map(|p| hypotheses.iter().map(|h| Self::score(p, h)).collect())
            .collect())
    }
}

/// Lookup table keyed by `(premise, hypothesis)` with a default score.
#[derive(Debug, Clone, Default)]
pub struct TableNli {
    table: HashMap<(String, String), f64>,
    default: f64,
}

impl TableNli {
    pub fn new(default: f64) -> Self {
        Self {
            table: HashMap::new(),
            default,
        }
    }

    pub fn with(mut self, premise: &str, hypothesis: &str, score: f64) -> Self {
        self.table
            .insert((premise.to_string(), hypothesis.to_string()), score);
        self
    }
}

impl NliProvider for TableNli {
    fn nli(&self, premises: &[String], hypotheses: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        if premises.is_empty() || hypotheses.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        Ok(premises
            .iter()
            .map(|p| {
                hypotheses
                    .iter()
                    .map(|h| {
                        *self
                            .table
                            .get(&(p.clone(), h.clone()))
                            .unwrap_or(&self.default)
                    })
                    .collect()
            })
            .collect())
    }
}

/// Embedding lookup table for hand-built fixtures.
#[derive(Debug, Clone, Default)]
pub struct TableEmbedder {
    table: HashMap<String, Vec<f64>>,
}

impl TableEmbedder {
    pub fn with(mut self, text: &str, vector: Vec<f64>) -> Self {
        self.table.insert(text.to_string(), vector);
        self
    }
}

impl EmbeddingProvider for TableEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        texts
            .iter()
            .map(|t| {
                self.table
                    .get(t)
                    .cloned()
                    .ok_or_else(|| ProviderError::Malformed(format!("no embedding for `{t}`")))
            })
            .collect()
    }
}

/// Batching limits for remote providers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    pub batch_size: usize,
    pub max_in_flight: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_in_flight: 4,
        }
    }
}

/// Runs `call` on consecutive chunks of `items`, at most `max_in_flight`
/// at a time, and concatenates the results in input order.
fn batched<T, R, F>(items: &[T], batch: BatchConfig, call: F) -> Result<Vec<R>, ProviderError>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> Result<Vec<R>, ProviderError> + Sync,
{
    let chunks: Vec<&[T]> = items.chunks(batch.batch_size.max(1)).collect();
    let mut out = Vec::with_capacity(items.len());
    for wave in chunks.chunks(batch.max_in_flight.max(1)) {
        let results: Vec<Result<Vec<R>, ProviderError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = wave
                .iter()
                .map(|chunk| scope.spawn(|| call(chunk)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("provider worker panicked"))
                .collect()
        });
        for r in results {
            out.extend(r?);
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct NliRequest<'a> {
    premises: &'a [String],
    hypotheses: &'a [String],
}

#[derive(Deserialize)]
struct NliResponse {
    scores: Vec<Vec<f64>>,
}

/// Embeddings from the sidecar, batched over texts.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    client: HttpClient,
    batch: BatchConfig,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteConfig, batch: BatchConfig) -> Self {
        Self {
            client: HttpClient::new(config),
            batch,
        }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let url = self.client.url("/v1/embed");
        let out = batched(texts, self.batch, |chunk| {
            let r: EmbedResponse = self.client.post("/v1/embed", &EmbedRequest { texts: chunk })?;
            validate_embeddings(&r.embeddings, chunk.len())
                .map_err(|m| RemoteError::protocol(&url, m))?;
            Ok(r.embeddings)
        })?;
        validate_embeddings(&out, texts.len()).map_err(|m| RemoteError::protocol(&url, m))?;
        Ok(out)
    }
}

/// NLI scores from the sidecar, batched over premises.
#[derive(Debug, Clone)]
pub struct RemoteNli {
    client: HttpClient,
    batch: BatchConfig,
}

impl RemoteNli {
    pub fn new(config: RemoteConfig, batch: BatchConfig) -> Self {
        Self {
            client: HttpClient::new(config),
            batch,
        }
    }
}

impl NliProvider for RemoteNli {
    fn nli(&self, premises: &[String], hypotheses: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        if premises.is_empty() || hypotheses.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let url = self.client.url("/v1/nli");
        batched(premises, self.batch, |chunk| {
            let r: NliResponse = self.client.post(
                "/v1/nli",
                &NliRequest {
                    premises: chunk,
                    hypotheses,
                },
            )?;
            validate_scores(&r.scores, chunk.len(), hypotheses.len())
                .map_err(|m| RemoteError::protocol(&url, m))?;
            Ok(r.scores)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn hash_embedder_is_deterministic_and_non_negative() {
        let e = HashEmbedder::default();
        let out = e.embed(&s(&["the cat", "the cat", "dog"])).unwrap();
        assert_eq!(out[0], out[1]);
        assert_ne!(out[0], out[2]);
        assert!(out.iter().flatten().all(|v| *v >= 0.0));
        assert_eq!(e.embed_one("The CAT!"), out[0]);
    }

    #[test]
    fn lexical_nli_shape_and_identity() {
        let m = LexicalNli
            .nli(&s(&["the cat sat", "a dog"]), &s(&["the cat", "cat dog", "x"]))
            .unwrap();
        assert_eq!(m.len(), 2);
        assert!(m.iter().all(|r| r.len() == 3));
        assert_eq!(m[0][0], 1.0);
        assert_eq!(m[0][1], 0.5);
        assert_eq!(m[1][2], 0.0);
        assert_eq!(LexicalNli::score("same text", "same text"), 1.0);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert_eq!(LexicalNli.nli(&[], &s(&["a"])).unwrap_err(), ProviderError::EmptyInput);
        assert_eq!(HashEmbedder::default().embed(&[]).unwrap_err(), ProviderError::EmptyInput);
    }

    #[test]
    fn score_validation() {
        assert!(validate_scores(&[vec![0.1, 1.0]], 1, 2).is_ok());
        assert!(validate_scores(&[vec![0.1, 1.3]], 1, 2).is_err());
        assert!(validate_scores(&[vec![0.1]], 1, 2).is_err());
        assert!(validate_scores(&[vec![0.1, 0.2]], 2, 2).is_err());
    }

    #[test]
    fn embedding_validation() {
        assert!(validate_embeddings(&[vec![1.0], vec![2.0]], 2).is_ok());
        assert!(validate_embeddings(&[vec![1.0], vec![2.0, 1.0]], 2).is_err());
        assert!(validate_embeddings(&[vec![]], 1).is_err());
    }

    #[test]
    fn batching_preserves_order() {
        let items: Vec<usize> = (0..23).collect();
        let batch = BatchConfig {
            batch_size: 4,
            max_in_flight: 2,
        };
        let out = batched(&items, batch, |c| Ok(c.iter().map(|x| x * 10).collect())).unwrap();
        assert_eq!(out, items.iter().map(|x| x * 10).collect::<Vec<_>>());
    }
}
