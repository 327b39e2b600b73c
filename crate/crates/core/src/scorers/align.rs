use super::providers::{validate_scores, NliProvider, ProviderError};
use super::text::split_sentences;
use super::ScoreError;

/// Groups consecutive sentences into chunks of at most `chunk_size`,
/// joined with single spaces.
pub fn chunk_sentences(text: &str, chunk_size: usize) -> Vec<String> {
    split_sentences(text)
        .sentences
        .chunks(chunk_size.max(1))
        .map(|c| c.join(" "))
        .collect()
}

/// AlignScore: mean over summary chunks of the maximum alignment against
/// source chunks. `alignment` is called once with source chunks as
/// premises and summary chunks as hypotheses.
pub fn align_score(
    summary: &str,
    source: &str,
    alignment: &dyn NliProvider,
    chunk_size: usize,
) -> Result<f64, ScoreError> {
    if chunk_size == 0 {
        return Err(ScoreError::Config("chunk_size must be at least 1".into()));
    }
    let summary = chunk_sentences(summary, chunk_size);
    let source = chunk_sentences(source, chunk_size);
    let scores = alignment.nli(&source, &summary)?;
    validate_scores(&scores, source.len(), summary.len()).map_err(ProviderError::Malformed)?;
    let total: f64 = (0..summary.len())
        .map(|i| scores.iter().map(|r| r[i]).fold(f64::NEG_INFINITY, f64::max))
        .sum();
    Ok(total / summary.len() as f64)
}

/// FactCC: a single NLI call with the whole source as premise and the whole
/// summary as hypothesis.
pub fn factcc_score(summary: &str, source: &str, nli: &dyn NliProvider) -> Result<f64, ScoreError> {
    let scores = nli.nli(&[source.to_string()], &[summary.to_string()])?;
    validate_scores(&scores, 1, 1).map_err(ProviderError::Malformed)?;
    Ok(scores[0][0])
}
