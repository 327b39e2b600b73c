//! Language-model contract and log-space helpers.
//!
//! Everything here works with unnormalised logits and log-probabilities;
//! probabilities only appear as softmax outputs. Sequence scores are raw
//! sums of token log-probabilities with no length normalisation.

mod remote;
mod toy;
mod vocab;

pub use remote::RemoteLm;
pub use toy::{ToyLm, ToyLmShape, WarmStartExample};
pub use vocab::{Vocab, VocabError};

use crate::remote::RemoteError;

pub type TokenId = u32;

/// End-of-sequence token id used by every backend and record in the crate.
pub const EOS_TOKEN: TokenId = 0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LmError {
    #[error("token {token} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: TokenId, vocab_size: usize },
    #[error("prefix of length {len} reaches the maximum length {max_len}")]
    PrefixTooLong { len: usize, max_len: usize },
    #[error("summary must be non-empty and end with the end-of-sequence token")]
    NotTerminated,
    #[error("backend returned {got} logits, expected {expected}")]
    WrongLength { got: usize, expected: usize },
    #[error("backend returned a non-finite logit at index {index}")]
    NonFinite { index: usize },
    #[error(transparent)]
    Remote(#[from] RemoteError),
}

/// Conditional next-token model: logits for `prefix` given `source`.
///
/// Implementations must be deterministic and return exactly
/// [`vocab_size`](LanguageModel::vocab_size) finite values.
pub trait LanguageModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn eos_token(&self) -> TokenId {
        EOS_TOKEN
    }

    /// Longest prefix plus one; `logits` rejects prefixes this long.
    fn max_len(&self) -> usize;

    fn logits(&self, source: &[TokenId], prefix: &[TokenId]) -> Result<Vec<f64>, LmError>;
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn eos_token(&self) -> TokenId {
        (**self).eos_token()
    }
    fn max_len(&self) -> usize {
        (**self).max_len()
    }
    fn logits(&self, source: &[TokenId], prefix: &[TokenId]) -> Result<Vec<f64>, LmError> {
        (**self).logits(source, prefix)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<T> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn eos_token(&self) -> TokenId {
        (**self).eos_token()
    }
    fn max_len(&self) -> usize {
        (**self).max_len()
    }
    fn logits(&self, source: &[TokenId], prefix: &[TokenId]) -> Result<Vec<f64>, LmError> {
        (**self).logits(source, prefix)
    }
}

/// Checks a logits vector against the contract.
pub fn check_logits(logits: &[f64], vocab_size: usize) -> Result<(), LmError> {
    if logits.len() != vocab_size {
        return Err(LmError::WrongLength {
            got: logits.len(),
            expected: vocab_size,
        });
    }
    match logits.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(LmError::NonFinite { index }),
        None => Ok(()),
    }
}

pub(crate) fn check_tokens(tokens: &[TokenId], vocab_size: usize) -> Result<(), LmError> {
    match tokens.iter().find(|&&t| t as usize >= vocab_size) {
        Some(&token) => Err(LmError::TokenOutOfRange { token, vocab_size }),
        None => Ok(()),
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|v| v - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Log-probability of each token of `continuation` after `prefix`.
pub fn stepwise_logprobs<L: LanguageModel + ?Sized>(
    lm: &L,
    source: &[TokenId],
    prefix: &[TokenId],
    continuation: &[TokenId],
) -> Result<Vec<f64>, LmError> {
    let vocab = lm.vocab_size();
    check_tokens(continuation, vocab)?;
    let mut context = prefix.to_vec();
    let mut out = Vec::with_capacity(continuation.len());
    for &token in continuation {
        let logits = lm.logits(source, &context)?;
        check_logits(&logits, vocab)?;
        out.push(logits[token as usize] - log_sum_exp(&logits));
        context.push(token);
    }
    Ok(out)
}

/// Conditional log-probability of `continuation` given `prefix` and `source`.
pub fn continuation_logprob<L: LanguageModel + ?Sized>(
    lm: &L,
    source: &[TokenId],
    prefix: &[TokenId],
    continuation: &[TokenId],
) -> Result<f64, LmError> {
    Ok(stepwise_logprobs(lm, source, prefix, continuation)?
        .into_iter()
        .sum())
}

/// Sum of token log-probabilities of a complete, EOS-terminated summary.
pub fn sequence_logprob<L: LanguageModel + ?Sized>(
    lm: &L,
    source: &[TokenId],
    summary: &[TokenId],
) -> Result<f64, LmError> {
    if summary.last() != Some(&lm.eos_token()) {
        return Err(LmError::NotTerminated);
    }
    continuation_logprob(lm, source, &[], summary)
}
