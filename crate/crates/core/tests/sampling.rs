use factpref_core::decoding::{greedy_decode, sample_decode, tempered_probs, DecodeError};
use factpref_core::lm::{LanguageModel, ToyLm, ToyLmShape};

#[test]
fn uniform_model_draws_uniform_first_tokens() {
    // zero parameters give uniform logits; max_len 2 leaves one free draw
    let lm = ToyLm::zeros(ToyLmShape::new(4, 2, 2));
    let draws = 10_000u64;
    let mut counts = [0u64; 4];
    for seed in 0..draws {
        let h = sample_decode(&lm, &[1, 2], 1.0, seed, 2).unwrap();
        counts[h.tokens[0] as usize] += 1;
    }
    let expected = draws as f64 / 4.0;
    let sigma = (draws as f64 * 0.25 * 0.75).sqrt();
    let mut chi2 = 0.0;
    for c in counts {
        assert!((c as f64 - expected).abs() <= 3.0 * sigma, "{counts:?}");
        chi2 += (c as f64 - expected).powi(2) / expected;
    }
    // 99.9% quantile of chi-square with 3 degrees of freedom
    assert!(chi2 < 16.266, "chi2 = {chi2}");
}

fn peaked() -> ToyLm {
    let mut lm = ToyLm::init(ToyLmShape::new(5, 2, 3), 4, 0.3);
    let v = 5;
    for prev in 0..=v {
        // each context strongly prefers one token; token 1 then 2 then EOS
        let target = match prev {
            p if p == v => 1,
            1 => 2,
            _ => 0,
        };
        lm.bigram_mut()[prev * v + target] += 1.0;
    }
    lm
}

#[test]
fn near_zero_temperature_follows_the_greedy_path() {
    let lm = peaked();
    let source = [3, 4];
    let greedy = greedy_decode(&lm, &source, 8).unwrap();
    // mass of the argmax token at every greedy step
    for i in 0..greedy.tokens.len() {
        let logits = lm.logits(&source, &greedy.tokens[..i]).unwrap();
        let probs = tempered_probs(&logits, 0.01);
        assert!(probs[greedy.tokens[i] as usize] >= 0.999);
    }
    for seed in 0..1000 {
        assert_eq!(sample_decode(&lm, &source, 0.01, seed, 8).unwrap().tokens, greedy.tokens);
    }
}

#[test]
fn seeded_samples_repeat_and_vary() {
    let lm = ToyLm::init(ToyLmShape::new(6, 3, 3), 9, 1.0);
    let a = sample_decode(&lm, &[1, 5], 1.0, 42, 10).unwrap();
    assert_eq!(a, sample_decode(&lm, &[1, 5], 1.0, 42, 10).unwrap());
    let distinct: std::collections::HashSet<_> = (0..50)
        .map(|s| sample_decode(&lm, &[1, 5], 1.0, s, 10).unwrap().tokens)
        .collect();
    assert!(distinct.len() > 1);
}

#[test]
fn non_positive_temperature_is_rejected() {
    let lm = ToyLm::zeros(ToyLmShape::new(4, 2, 2));
    for t in [0.0, -1.0, f64::NAN] {
        assert!(matches!(sample_decode(&lm, &[1], t, 0, 4), Err(DecodeError::Temperature(_))));
    }
}
