use std::path::Path;

use serde::{Deserialize, Serialize};

use super::providers::{validate_scores, NliProvider, ProviderError};
use super::text::split_sentences;
use super::ScoreError;

/// Relative frequencies of `row` over `bins` evenly spaced bins on [0, 1].
///
/// Bin `b` covers `[b/h, (b+1)/h)`; the last bin is closed so that 1.0
/// lands in it. The index is `floor(v * h)` clamped to `h - 1`.
pub fn histogram_row(row: &[f64], bins: usize) -> Vec<f64> {
    let mut hist = vec![0.0; bins];
    if row.is_empty() {
        return hist;
    }
    for &v in row {
        let idx = ((v * bins as f64).floor() as usize).min(bins - 1);
        hist[idx] += 1.0;
    }
    let n = row.len() as f64;
    hist.iter_mut().for_each(|c| *c /= n);
    hist
}

/// Convolution over the bin axis: a kernel spanning all `h` bins applied to
/// each summary sentence's histogram, i.e. `score_i = sum_b w_b H_ib`.
///
/// Trained SummaC-Conv weights can be loaded from a file of the form
/// `{"h": 50, "weights": [...]}`. Without such a file, [`SummacConv::fallback`]
/// uses a linear ramp `w_b = b / (h - 1)`: the expected normalised bin
/// index. It is a stand-in for the trained layer, not a reproduction of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummacConv {
    pub h: usize,
    pub weights: Vec<f64>,
}

pub const DEFAULT_BINS: usize = 50;

impl Default for SummacConv {
    fn default() -> Self {
        Self::fallback(DEFAULT_BINS)
    }
}

impl SummacConv {
    pub fn new(h: usize, weights: Vec<f64>) -> Result<Self, ScoreError> {
        let conv = Self { h, weights };
        conv.validate()?;
        Ok(conv)
    }

    /// Untrained ramp weights; all-entailed rows score 1, all-zero rows 0.
    pub fn fallback(h: usize) -> Self {
        assert!(h >= 2, "at least two bins are required");
        Self {
            h,
            weights: (0..h).map(|b| b as f64 / (h - 1) as f64).collect(),
        }
    }

    /// Bin-midpoint weights; a constant row at a bin midpoint scores that
    /// constant.
    pub fn midpoint(h: usize) -> Self {
        assert!(h >= 2, "at least two bins are required");
        Self {
            h,
            weights: (0..h).map(|b| (b as f64 + 0.5) / h as f64).collect(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, ScoreError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScoreError::Config(format!("{}: {e}", path.display())))?;
        let conv: SummacConv = serde_json::from_str(&text)
            .map_err(|e| ScoreError::Config(format!("{}: {e}", path.display())))?;
        conv.validate()?;
        Ok(conv)
    }

    fn validate(&self) -> Result<(), ScoreError> {
        if self.h < 2 {
            return Err(ScoreError::Config(format!("h must be at least 2, got {}", self.h)));
        }
        if self.weights.len() != self.h {
            return Err(ScoreError::Shape(format!(
                "conv weights have length {}, expected h = {}",
                self.weights.len(),
                self.h
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(ScoreError::Config("conv weights must be finite".into()));
        }
        Ok(())
    }

    pub fn apply(&self, histogram: &[f64]) -> f64 {
        self.weights.iter().zip(histogram).map(|(w, h)| w * h).sum()
    }
}

/// SummaC: NLI matrix over (summary sentence, source sentence), one
/// histogram per summary sentence, convolution, mean over sentences.
pub fn summac_score(
    summary: &str,
    source: &str,
    nli: &dyn NliProvider,
    conv: &SummacConv,
) -> Result<f64, ScoreError> {
    conv.validate()?;
    let summary = split_sentences(summary).sentences;
    let source = split_sentences(source).sentences;
    // premises = source sentences, hypotheses = summary sentences
    let by_source = nli.nli(&source, &summary)?;
    validate_scores(&by_source, source.len(), summary.len()).map_err(ProviderError::Malformed)?;
    let total: f64 = (0..summary.len())
        .map(|i| {
            let row: Vec<f64> = by_source.iter().map(|r| r[i]).collect();
            conv.apply(&histogram_row(&row, conv.h))
        })
        .sum();
    Ok(total / summary.len() as f64)
}
