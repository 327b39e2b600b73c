//! Seeded synthetic corpora for desk-scale runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lm::{sequence_logprob, LanguageModel, LmError, TokenId, Vocab, WarmStartExample, EOS_TOKEN};
use crate::types::{Document, PreferenceRecord, Strategy, SummaryCandidate};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error("vocabulary needs at least {0} content words")]
    TooFewWords(usize),
    #[error("marker `{0}` is not a content word of the vocabulary")]
    BadMarker(String),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Vocab(#[from] crate::lm::VocabError),
}

/// Ids of words that are neither EOS nor punctuation.
pub fn content_words(vocab: &Vocab) -> Vec<TokenId> {
    (1..vocab.len() as TokenId)
        .filter(|&id| {
            vocab
                .word(id)
                .is_some_and(|w| w.chars().any(char::is_alphanumeric))
        })
        .collect()
}

fn full_stop(vocab: &Vocab) -> Option<TokenId> {
    vocab.id(".")
}

fn sentence(rng: &mut ChaCha8Rng, words: &[TokenId], stop: Option<TokenId>, len: usize) -> Vec<TokenId> {
    let mut out: Vec<TokenId> = (0..len).map(|_| words[rng.random_range(0..words.len())]).collect();
    out.extend(stop);
    out
}

/// `n` documents of 2 to 4 sentences, each sentence 2 to 4 random content
/// words closed by `.` when the vocabulary has one. Ids are `doc-0000`,
/// `doc-0001`, ...
pub fn toy_documents(n: usize, vocab: &Vocab, seed: u64) -> Result<Vec<Document>, CorpusError> {
    let words = content_words(vocab);
    if words.len() < 2 {
        return Err(CorpusError::TooFewWords(2));
    }
    let stop = full_stop(vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|i| {
            let sentences = rng.random_range(2..=4);
            let mut tokens = Vec::new();
            for _ in 0..sentences {
                let len = rng.random_range(2..=4);
                tokens.extend(sentence(&mut rng, &words, stop, len));
            }
            Document::new(format!("doc-{i:04}"), vocab.decode(&tokens))
        })
        .collect())
}

/// First sentence of each document as its maximum-likelihood target.
pub fn warm_start_examples(docs: &[Document], vocab: &Vocab) -> Result<Vec<WarmStartExample>, CorpusError> {
    let stop = full_stop(vocab);
    docs.iter()
        .map(|d| {
            let source = vocab.encode(&d.source)?;
            let end = stop
                .and_then(|s| source.iter().position(|&t| t == s))
                .map_or(source.len(), |p| p + 1);
            let mut target = source[..end].to_vec();
            target.push(EOS_TOKEN);
            Ok(WarmStartExample { source, target })
        })
        .collect()
}

fn candidate(
    lm: &dyn LanguageModel,
    vocab: &Vocab,
    doc_id: &str,
    source: &[TokenId],
    rank: u32,
    tokens: Vec<TokenId>,
) -> Result<SummaryCandidate, CorpusError> {
    Ok(SummaryCandidate {
        doc_id: doc_id.to_string(),
        strategy: Strategy::Beam,
        rank,
        temperature: None,
        seed: None,
        logprob: sequence_logprob(lm, source, &tokens)?,
        text: vocab.decode(&tokens),
        tokens,
    })
}

/// A preference set that a model can separate by one token.
///
/// Per document, a base summary of 2 to 4 content words other than
/// `marker` (plus `.`) is drawn; the rejected summary is the base and the
/// chosen summary is the base with one random word replaced by `marker`.
/// Log-probabilities are recorded under `lm`.
pub fn separable_preferences(
    docs: &[Document],
    vocab: &Vocab,
    marker: &str,
    lm: &dyn LanguageModel,
    seed: u64,
) -> Result<Vec<PreferenceRecord>, CorpusError> {
    let marker_id = vocab
        .id(marker)
        .filter(|id| content_words(vocab).contains(id))
        .ok_or_else(|| CorpusError::BadMarker(marker.to_string()))?;
    let words: Vec<TokenId> = content_words(vocab).into_iter().filter(|&t| t != marker_id).collect();
    if words.is_empty() {
        return Err(CorpusError::TooFewWords(2));
    }
    let stop = full_stop(vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    docs.iter()
        .map(|d| {
            let source = vocab.encode(&d.source)?;
            let len = rng.random_range(2..=4);
            let mut rejected = sentence(&mut rng, &words, stop, len);
            rejected.push(EOS_TOKEN);
            let mut chosen = rejected.clone();
            chosen[rng.random_range(0..len)] = marker_id;
            Ok(PreferenceRecord {
                doc_id: d.id.clone(),
                source: d.source.clone(),
                chosen: candidate(lm, vocab, &d.id, &source, 0, chosen)?,
                rejected: candidate(lm, vocab, &d.id, &source, 1, rejected)?,
                agreeing_metrics: vec!["separable".to_string()],
            })
        })
        .collect()
}

/// Fraction of `tokens` equal to `marker`, ignoring EOS.
pub fn marker_frequency(tokens: &[TokenId], marker: TokenId) -> f64 {
    let body: Vec<_> = tokens.iter().filter(|&&t| t != EOS_TOKEN).collect();
    if body.is_empty() {
        return 0.0;
    }
    body.iter().filter(|&&&t| t == marker).count() as f64 / body.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{ToyLm, ToyLmShape};
    use crate::types::Validate;

    #[test]
    fn documents_are_seeded_and_valid() {
        let vocab = Vocab::default();
        let a = toy_documents(20, &vocab, 3).unwrap();
        assert_eq!(a, toy_documents(20, &vocab, 3).unwrap());
        assert_ne!(a, toy_documents(20, &vocab, 4).unwrap());
        for d in &a {
            d.validate().unwrap();
            let tokens = vocab.encode(&d.source).unwrap();
            assert_eq!(vocab.decode(&tokens), d.source);
        }
    }

    #[test]
    fn warm_start_targets_are_lead_sentences() {
        let vocab = Vocab::default();
        let docs = toy_documents(5, &vocab, 1).unwrap();
        for (d, ex) in docs.iter().zip(warm_start_examples(&docs, &vocab).unwrap()) {
            let lead = vocab.decode(&ex.target);
            assert!(d.source.starts_with(&lead));
            assert_eq!(ex.target.last(), Some(&EOS_TOKEN));
        }
    }

    #[test]
    fn separable_records_differ_only_by_marker() {
        let vocab = Vocab::default();
        let lm = ToyLm::init(ToyLmShape::new(vocab.len(), 3, 4), 0, 0.1);
        let docs = toy_documents(30, &vocab, 2).unwrap();
        let marker = vocab.id("home").unwrap();
        let prefs = separable_preferences(&docs, &vocab, "home", &lm, 9).unwrap();
        assert_eq!(prefs.len(), 30);
        for p in &prefs {
            p.validate().unwrap();
            let diff: Vec<_> = p
                .chosen
                .tokens
                .iter()
                .zip(&p.rejected.tokens)
                .filter(|(a, b)| a != b)
                .collect();
            assert_eq!(diff.len(), 1);
            assert_eq!(*diff[0].0, marker);
            assert!(!p.rejected.tokens.contains(&marker));
        }
        assert!(matches!(
            separable_preferences(&docs, &vocab, ".", &lm, 9),
            Err(CorpusError::BadMarker(_))
        ));
    }

    #[test]
    fn marker_frequency_counts_body_tokens() {
        assert_eq!(marker_frequency(&[3, 7, 7, 1, 0], 7), 0.5);
        assert_eq!(marker_frequency(&[0], 7), 0.0);
    }
}
