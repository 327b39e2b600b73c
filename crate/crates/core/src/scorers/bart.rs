use serde::{Deserialize, Serialize};

use super::ScoreError;
use crate::lm::{stepwise_logprobs, LanguageModel, LmError, TokenId};

/// Per-token weights `w_t` of the weighted log-likelihood.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenWeights {
    /// `w_t = 1`: the plain sequence log-probability.
    #[default]
    Unit,
    /// `w_t = 1 / |S|`: the mean token log-probability.
    Mean,
    /// Explicit weights, one per summary token.
    Explicit(Vec<f64>),
}

/// BARTScore: `sum_t w_t log p(S_t | S_<t, D)` under `lm`.
pub fn bart_score<L: LanguageModel + ?Sized>(
    lm: &L,
    source: &[TokenId],
    summary: &[TokenId],
    weights: &TokenWeights,
) -> Result<f64, ScoreError> {
    if summary.is_empty() {
        return Err(LmError::NotTerminated.into());
    }
    let steps = stepwise_logprobs(lm, source, &[], summary)?;
    let n = steps.len() as f64;
    Ok(match weights {
        TokenWeights::Unit => steps.iter().sum(),
        TokenWeights::Mean => steps.iter().map(|lp| lp / n).sum(),
        TokenWeights::Explicit(w) => {
            if w.len() != steps.len() {
                return Err(ScoreError::Shape(format!(
                    "{} token weights for a summary of {} tokens",
                    w.len(),
                    steps.len()
                )));
            }
            steps.iter().zip(w).map(|(lp, w)| lp * w).sum()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{sequence_logprob, ToyLm, ToyLmShape};

    fn setup() -> (ToyLm, Vec<TokenId>, Vec<TokenId>) {
        (ToyLm::init(ToyLmShape::new(6, 3, 4), 21, 1.0), vec![1, 4, 5], vec![2, 3, 5, 0])
    }

    #[test]
    fn unit_weights_equal_sequence_logprob() {
        let (m, src, sum) = setup();
        let s = bart_score(&m, &src, &sum, &TokenWeights::Unit).unwrap();
        assert!((s - sequence_logprob(&m, &src, &sum).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_give_zero() {
        let (m, src, sum) = setup();
        let s = bart_score(&m, &src, &sum, &TokenWeights::Explicit(vec![0.0; 4])).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn mean_weights_divide_by_length() {
        let (m, src, sum) = setup();
        let s = bart_score(&m, &src, &sum, &TokenWeights::Mean).unwrap();
        let oracle = sequence_logprob(&m, &src, &sum).unwrap() / 4.0;
        assert!((s - oracle).abs() < 1e-12);
    }

    #[test]
    fn weight_length_must_match() {
        let (m, src, sum) = setup();
        assert!(matches!(
            bart_score(&m, &src, &sum, &TokenWeights::Explicit(vec![1.0; 3])),
            Err(ScoreError::Shape(_))
        ));
    }
}
