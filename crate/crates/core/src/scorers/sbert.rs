use super::providers::{validate_embeddings, EmbeddingProvider, ProviderError};
use super::text::split_sentences;
use super::ScoreError;

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn is_zero(v: &[f64]) -> bool {
    v.iter().all(|x| *x == 0.0)
}

/// SBERTScore: mean over summary sentences of the maximum cosine
/// similarity against the source sentences. All sentences are embedded in
/// one provider call, summary sentences first.
pub fn sbert_score(
    summary: &str,
    source: &str,
    embedder: &dyn EmbeddingProvider,
) -> Result<f64, ScoreError> {
    let summary = split_sentences(summary).sentences;
    let source = split_sentences(source).sentences;
    let texts: Vec<String> = summary.iter().chain(&source).cloned().collect();
    let embeddings = embedder.embed(&texts)?;
    validate_embeddings(&embeddings, texts.len()).map_err(ProviderError::Malformed)?;
    if let Some(i) = embeddings.iter().position(|e| is_zero(e)) {
        return Err(ScoreError::ZeroEmbedding {
            text: texts[i].clone(),
        });
    }
    let (sum_emb, src_emb) = embeddings.split_at(summary.len());
    let total: f64 = sum_emb
        .iter()
        .map(|s| {
            src_emb
                .iter()
                .map(|d| cosine(s, d))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    Ok(total / summary.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorers::providers::{HashEmbedder, TableEmbedder};

    #[test]
    fn orthonormal_fixture() {
        let e = TableEmbedder::default()
            .with("Alpha one.", vec![1.0, 0.0, 0.0])
            .with("Beta two.", vec![0.0, 1.0, 0.0])
            .with("Gamma three.", vec![0.0, 0.0, 1.0]);
        // summary -> e1, e2; source -> e1, e3
        let score = sbert_score("Alpha one. Beta two.", "Alpha one. Gamma three.", &e).unwrap();
        assert!((score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn copied_sentence_contributes_one() {
        let e = HashEmbedder::default();
        let score = sbert_score("The cat sat.", "The dog ran. The cat sat.", &e).unwrap();
        assert!((score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_summary_scores_zero() {
        let e = TableEmbedder::default()
            .with("Only.", vec![0.0, 1.0])
            .with("Other.", vec![1.0, 0.0])
            .with("More.", vec![2.0, 0.0]);
        assert_eq!(sbert_score("Only.", "Other. More.", &e).unwrap(), 0.0);
    }

    #[test]
    fn zero_embedding_is_an_error() {
        let e = HashEmbedder::default();
        assert!(matches!(
            sbert_score("...", "The cat.", &e),
            Err(ScoreError::ZeroEmbedding { .. })
        ));
    }

    #[test]
    fn non_negative_embeddings_score_in_unit_interval() {
        let e = HashEmbedder::default();
        let s = sbert_score("Dog ran home. Cat.", "The cat sat. A bird flew.", &e).unwrap();
        assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn invariant_to_source_sentence_order() {
        let e = HashEmbedder::default();
        let a = sbert_score("The cat ran.", "The dog sat. A cat ran home. Birds fly.", &e).unwrap();
        let b = sbert_score("The cat ran.", "Birds fly. The dog sat. A cat ran home.", &e).unwrap();
        assert_eq!(a, b);
    }
}
