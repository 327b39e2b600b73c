//! Deterministic inputs for the benchmarks.

use factpref_core::corpus::toy_documents;
use factpref_core::dpo::EncodedPreference;
use factpref_core::lm::{ToyLm, ToyLmShape, Vocab, EOS_TOKEN};
use factpref_core::Document;

/// Model over the default vocabulary with the pipeline's default sizes.
pub fn model() -> (Vocab, ToyLm) {
    let vocab = Vocab::default();
    let lm = ToyLm::init(ToyLmShape::new(vocab.len(), 8, 16), 1, 0.5);
    (vocab, lm)
}

pub fn documents(n: usize) -> Vec<Document> {
    toy_documents(n, &Vocab::default(), 11).expect("default vocabulary has content words")
}

/// `n` preference records whose members are the first and last sentence
/// of each document.
pub fn preferences(n: usize, vocab: &Vocab) -> Vec<EncodedPreference> {
    documents(n)
        .iter()
        .map(|d| {
            let source = vocab.encode(&d.source).expect("corpus text is in the vocabulary");
            let stop = vocab.id(".").expect("default vocabulary has `.`");
            let cut = source.iter().position(|&t| t == stop).map_or(source.len(), |p| p + 1);
            let mut chosen = source[..cut].to_vec();
            chosen.push(EOS_TOKEN);
            let mut rejected = source[cut..].to_vec();
            rejected.push(EOS_TOKEN);
            EncodedPreference { source, chosen, rejected }
        })
        .collect()
}

/// Long summary/reference text pair for the lexical metrics.
pub fn long_texts(sentences: usize) -> (String, String) {
    let docs = documents(sentences);
    let summary = docs.iter().map(|d| d.source.as_str()).collect::<Vec<_>>().join(" ");
    let reference = docs.iter().rev().map(|d| d.source.as_str()).collect::<Vec<_>>().join(" ");
    (summary, reference)
}
