//! Decoding strategies and similar-pair construction.
//!
//! All decoders score sequences by the raw sum of token log-probabilities
//! (no length penalty) and impose the length limit by forcing the
//! end-of-sequence token at position `max_len`, scored with its true model
//! probability. The search space of every decoder is therefore the set of
//! EOS-terminated sequences of at most `max_len` tokens.
//!
//! Ties are broken towards the lexicographically smallest token sequence
//! (for greedy decoding: the lowest token id), which makes every decoder
//! bitwise deterministic.
//!
//! Sampling draws `u ~ U[0, 1)` from a ChaCha8 generator seeded with
//! `seed_from_u64(seed)` and picks the first token whose cumulative
//! tempered probability exceeds `u` (inverse CDF).

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotation::pair_similarity;
use crate::scorers::words;
use crate::lm::{check_logits, log_softmax, softmax, LanguageModel, LmError, TokenId, Vocab};
use crate::types::{Strategy, SummaryCandidate, SummaryPair};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("beam size must be at least 1")]
    BeamSize,
    #[error("max_len must be at least 1")]
    MaxLen,
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("rank {rank} out of range: beam holds {available} candidate(s)")]
    RankOutOfRange { rank: usize, available: usize },
    #[error(transparent)]
    Lm(#[from] LmError),
}

/// A decoded token sequence with its score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    /// EOS was imposed by the length limit rather than chosen.
    pub truncated: bool,
}

impl Hypothesis {
    pub fn into_candidate(
        self,
        doc_id: &str,
        strategy: Strategy,
        rank: u32,
        vocab: &Vocab,
    ) -> SummaryCandidate {
        SummaryCandidate {
            doc_id: doc_id.to_string(),
            strategy,
            rank,
            temperature: None,
            seed: None,
            text: vocab.decode(&self.tokens),
            tokens: self.tokens,
            logprob: self.logprob,
        }
    }
}

/// Best-first order: higher log-probability, then smaller token sequence.
pub fn rank_order(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.logprob
        .total_cmp(&a.logprob)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Finished beam-search outputs, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamSet {
    k: usize,
    candidates: Vec<Hypothesis>,
}

impl BeamSet {
    pub fn beam_size(&self) -> usize {
        self.k
    }

    pub fn candidates(&self) -> &[Hypothesis] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn best(&self) -> &Hypothesis {
        &self.candidates[0]
    }
}

fn check_max_len<L: LanguageModel + ?Sized>(lm: &L, max_len: usize) -> Result<(), DecodeError> {
    if max_len == 0 {
        return Err(DecodeError::MaxLen);
    }
    if max_len > lm.max_len() {
        return Err(LmError::PrefixTooLong {
            len: max_len - 1,
            max_len: lm.max_len(),
        }
        .into());
    }
    Ok(())
}

fn step_logprobs<L: LanguageModel + ?Sized>(
    lm: &L,
    source: &[TokenId],
    prefix: &[TokenId],
) -> Result<Vec<f64>, DecodeError> {
    let logits = lm.logits(source, prefix)?;
    check_logits(&logits, lm.vocab_size())?;
    Ok(log_softmax(&logits))
}

/// Beam search keeping the `k` best extensions at every step.
///
/// Extensions ending in EOS leave the beam for a finished pool. Search
/// stops when the beam is empty, or when the pool holds `k` hypotheses and
/// no active prefix scores at least as high as the `k`-th finished one
/// (extensions can only lower a score).
pub fn beam_search<L: LanguageModel + ?Sized>(
    lm: &L,
    source: &[TokenId],
    k: usize,
    max_len: usize,
) -> Result<BeamSet, DecodeError> {
    if k == 0 {
        return Err(DecodeError::BeamSize);
    }
    check_max_len(lm, max_len)?;
    let eos = lm.eos_token();
    let mut active = vec![Hypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
        truncated: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for step in 0..max_len {
        let last = step + 1 == max_len;
        let mut extensions = Vec::with_capacity(active.len() * lm.vocab_size());
        for hyp in &active {
            let logp = step_logprobs(lm, source, &hyp.tokens)?;
            let choices: Box<dyn Iterator<Item = TokenId>> = if last {
                Box::new(std::iter::once(eos))
            } else {
                Box::new(0..logp.len() as TokenId)
            };
            for token in choices {
                let mut tokens = hyp.tokens.clone();
                tokens.push(token);
                extensions.push(Hypothesis {
                    tokens,
                    logprob: hyp.logprob + logp[token as usize],
                    truncated: last,
                });
            }
        }
        extensions.sort_by(rank_order);
        extensions.truncate(k);

        active.clear();
        for ext in extensions {
            if ext.tokens.last() == Some(&eos) {
                finished.push(ext);
            } else {
                active.push(ext);
            }
        }
        if active.is_empty() {
            break;
        }
        if finished.len() >= k {
            finished.sort_by(rank_order);
            let kth = finished[k - 1].logprob;
            if active.iter().all(|h| h.logprob < kth) {
                break;
            }
        }
    }

    finished.sort_by(rank_order);
    finished.truncate(k);
    Ok(BeamSet {
        k,
        candidates: finished,
    })
}

/// The `rank`-th best finished hypothesis (0 = BS#1, 1 = BS#2).
pub fn kth_candidate(beams: &BeamSet, rank: usize) -> Result<&Hypothesis, DecodeError> {
    beams
        .candidates
        .get(rank)
        .ok_or(DecodeError::RankOutOfRange {
            rank,
            available: beams.candidates.len(),
        })
}

/// Takes the most likely token at each step; ties go to the lowest id.
pub fn greedy_decode<L: LanguageModel + ?Sized>(
    lm: &L,
    source: &[TokenId],
    max_len: usize,
) -> Result<Hypothesis, DecodeError> {
    check_max_len(lm, max_len)?;
    let eos = lm.eos_token();
    let mut tokens = Vec::new();
    let mut logprob = 0.0;
    for step in 0..max_len {
        let logp = step_logprobs(lm, source, &tokens)?;
        let last = step + 1 == max_len;
        let token = if last {
            eos
        } else {
            // first maximum wins, i.e. the lowest id among ties
            let mut best = 0;
            for (i, v) in logp.iter().enumerate() {
                if *v > logp[best] {
                    best = i;
                }
            }
            best as TokenId
        };
        logprob += logp[token as usize];
        tokens.push(token);
        if token == eos {
            return Ok(Hypothesis {
                tokens,
                logprob,
                truncated: last,
            });
        }
    }
    unreachable!("the final step always emits EOS")
}

/// Inverse-CDF draw: first index whose cumulative probability exceeds `u`.
pub fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Tempered distribution `softmax(logits / temperature)`.
pub fn tempered_probs(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    softmax(&scaled)
}

/// Samples each token from `softmax(logits / temperature)`.
///
/// The returned log-probability is under the untempered model, so it is
/// comparable with beam and greedy scores.
pub fn sample_decode<L: LanguageModel + ?Sized>(
    lm: &L,
    source: &[TokenId],
    temperature: f64,
    seed: u64,
    max_len: usize,
) -> Result<Hypothesis, DecodeError> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(DecodeError::Temperature(temperature));
    }
    check_max_len(lm, max_len)?;
    let eos = lm.eos_token();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tokens = Vec::new();
    let mut logprob = 0.0;
    for step in 0..max_len {
        let logits = lm.logits(source, &tokens)?;
        check_logits(&logits, lm.vocab_size())?;
        let last = step + 1 == max_len;
        let u: f64 = rng.random();
        let token = if last {
            eos
        } else {
            inverse_cdf(&tempered_probs(&logits, temperature), u) as TokenId
        };
        logprob += log_softmax(&logits)[token as usize];
        tokens.push(token);
        if token == eos {
            return Ok(Hypothesis {
                tokens,
                logprob,
                truncated: last,
            });
        }
    }
    unreachable!("the final step always emits EOS")
}

/// Which two decoders produce the members of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pairing {
    /// Best and second-best beam outputs.
    #[serde(rename = "bs1-bs2")]
    Bs1Bs2,
    /// Best beam output and the greedy path.
    #[serde(rename = "bs1-greedy")]
    Bs1Greedy,
    /// Best beam output and one temperature sample.
    #[serde(rename = "bs1-rs1")]
    Bs1Rs1,
}

impl fmt::Display for Pairing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pairing::Bs1Bs2 => "bs1-bs2",
            Pairing::Bs1Greedy => "bs1-greedy",
            Pairing::Bs1Rs1 => "bs1-rs1",
        })
    }
}

impl FromStr for Pairing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.replace('_', "-").as_str() {
            "bs1-bs2" => Ok(Pairing::Bs1Bs2),
            "bs1-greedy" => Ok(Pairing::Bs1Greedy),
            "bs1-rs1" => Ok(Pairing::Bs1Rs1),
            other => Err(format!(
                "unknown pairing `{other}` (expected bs1-bs2, bs1-greedy or bs1-rs1)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairingConfig {
    pub beam_size: usize,
    pub temperature: f64,
    pub seed: u64,
    pub max_len: usize,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self {
            beam_size: 4,
            temperature: 1.0,
            seed: 0,
            max_len: 16,
        }
    }
}

/// Why a document produced no pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// Beam search returned a single finished hypothesis.
    BeamCollapsed,
    /// Both decoders rendered the same text.
    IdenticalOutputs,
    /// A member rendered to empty text (immediate EOS).
    EmptySummary,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipReason::BeamCollapsed => "beam collapsed to one candidate",
            SkipReason::IdenticalOutputs => "pair members are identical",
            SkipReason::EmptySummary => "a pair member is empty",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairOutcome {
    Pair(Box<SummaryPair>),
    Skip(SkipReason),
}

/// Sampling seed for one document: the first 8 bytes of
/// `sha256(seed_le || doc_id)`. Independent of document order, so a
/// parallel or partial run reproduces the same samples.
pub fn document_seed(seed: u64, doc_id: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(doc_id.as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Decodes a pair of lexically close summaries for one document.
pub fn generate_pair<L: LanguageModel + ?Sized>(
    lm: &L,
    vocab: &Vocab,
    doc_id: &str,
    source: &[TokenId],
    pairing: Pairing,
    config: &PairingConfig,
) -> Result<PairOutcome, DecodeError> {
    let beams = beam_search(lm, source, config.beam_size, config.max_len)?;
    let a = beams.best().clone().into_candidate(doc_id, Strategy::Beam, 0, vocab);
    let b = match pairing {
        Pairing::Bs1Bs2 => match kth_candidate(&beams, 1) {
            Ok(h) => h.clone().into_candidate(doc_id, Strategy::Beam, 1, vocab),
            Err(DecodeError::RankOutOfRange { .. }) => {
                return Ok(PairOutcome::Skip(SkipReason::BeamCollapsed))
            }
            Err(e) => return Err(e),
        },
        Pairing::Bs1Greedy => greedy_decode(lm, source, config.max_len)?
            .into_candidate(doc_id, Strategy::Greedy, 0, vocab),
        Pairing::Bs1Rs1 => {
            let mut c = sample_decode(lm, source, config.temperature, config.seed, config.max_len)?
                .into_candidate(doc_id, Strategy::Sample, 0, vocab);
            c.temperature = Some(config.temperature);
            c.seed = Some(config.seed);
            c
        }
    };
    if words(&a.text).is_empty() || words(&b.text).is_empty() {
        return Ok(PairOutcome::Skip(SkipReason::EmptySummary));
    }
    if a.text == b.text {
        return Ok(PairOutcome::Skip(SkipReason::IdenticalOutputs));
    }
    let similarity =
        pair_similarity(&a.text, &b.text).expect("non-empty texts always have a similarity");
    Ok(PairOutcome::Pair(Box::new(SummaryPair {
        doc_id: doc_id.to_string(),
        a,
        b,
        similarity,
    })))
}
