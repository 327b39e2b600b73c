use super::text::words;
use super::ScoreError;

/// Length of the longest common subsequence, O(n·m) time, O(m) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L recall: LCS word count over reference word count.
///
/// Words are lowercased and split on whitespace and punctuation, with
/// punctuation dropped.
pub fn rouge_l(candidate: &str, reference: &str) -> Result<f64, ScoreError> {
    let reference = words(reference);
    if reference.is_empty() {
        return Err(ScoreError::EmptyReference);
    }
    let candidate = words(candidate);
    Ok(lcs_len(&candidate, &reference) as f64 / reference.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exponential-time reference for the DP.
    fn lcs_brute(a: &[String], b: &[String]) -> usize {
        match (a.split_first(), b.split_first()) {
            (Some((x, ra)), Some((y, rb))) => {
                if x == y {
                    1 + lcs_brute(ra, rb)
                } else {
                    lcs_brute(ra, b).max(lcs_brute(a, rb))
                }
            }
            _ => 0,
        }
    }

    #[test]
    fn identical_texts_score_one() {
        assert_eq!(rouge_l("The cat sat.", "the cat sat").unwrap(), 1.0);
    }

    #[test]
    fn dropped_word() {
        let c = words("the cat on mat");
        let r = words("the cat sat on mat");
        assert_eq!(lcs_brute(&c, &r), 4);
        assert_eq!(lcs_len(&c, &r), 4);
        assert!((rouge_l("the cat on mat", "the cat sat on mat").unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn disjoint_vocabularies() {
        assert_eq!(rouge_l("alpha beta", "gamma delta").unwrap(), 0.0);
    }

    #[test]
    fn empty_reference_is_an_error() {
        assert_eq!(rouge_l("x", " ... ").unwrap_err(), ScoreError::EmptyReference);
        assert_eq!(rouge_l("", "x").unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn dp_matches_brute_force(a in prop::collection::vec("[abc]", 0..8), b in prop::collection::vec("[abc]", 0..8)) {
            prop_assert_eq!(lcs_len(&a, &b), lcs_brute(&a, &b));
        }

        #[test]
        fn self_similarity_is_one(ws in prop::collection::vec("[a-e]{1,3}", 1..10)) {
            let text = ws.join(" ");
            prop_assert_eq!(rouge_l(&text, &text).unwrap(), 1.0);
        }

        #[test]
        fn deleting_a_word_never_raises_the_score(
            cand in prop::collection::vec("[a-d]", 1..10),
            reference in prop::collection::vec("[a-d]", 1..10),
            idx in 0usize..10,
        ) {
            let idx = idx % cand.len();
            let mut shorter = cand.clone();
            shorter.remove(idx);
            let before = rouge_l(&cand.join(" "), &reference.join(" ")).unwrap();
            let after = rouge_l(&shorter.join(" "), &reference.join(" ")).unwrap();
            prop_assert!(after <= before);
        }
    }
}
