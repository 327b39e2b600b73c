//! Word tokenisation and rule-based sentence splitting.

/// Lowercased words; every non-alphanumeric character is a separator and
/// is dropped.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Tokens ending in a period that never close a sentence (compared
/// lowercased, without the period).
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc", "inc", "ltd", "co", "corp",
    "no", "fig", "gen", "gov", "sen", "rep", "lt", "col", "sgt", "capt", "e.g", "i.e", "u.s",
    "u.k", "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec",
];

/// Sentences of a text with their byte ranges in the original string.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceSplit {
    pub sentences: Vec<String>,
    pub offsets: Vec<(usize, usize)>,
}

impl SentenceSplit {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

fn is_abbreviation(token: &str) -> bool {
    let stem = token.trim_end_matches('.');
    let stem = stem.trim_start_matches(|c: char| !c.is_alphanumeric());
    if stem.chars().count() == 1 && stem.chars().all(char::is_uppercase) {
        // initials such as "A." or "J."
        return true;
    }
    ABBREVIATIONS.contains(&stem.to_lowercase().as_str())
}

/// Splits on `.`, `!` or `?` followed by whitespace and an uppercase letter,
/// unless the word ending in `.` is an initial or a listed abbreviation.
/// Always returns at least one sentence; text without a boundary (or
/// whitespace-only text) yields the whole trimmed text.
pub fn split_sentences(text: &str) -> SentenceSplit {
    let start = text.len() - text.trim_start().len();
    let end = text.trim_end().len();
    let body = &text[start..end.max(start)];

    let mut boundaries = Vec::new();
    let chars: Vec<(usize, char)> = body.char_indices().collect();
    for (i, &(pos, c)) in chars.iter().enumerate() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let mut j = i + 1;
        if j >= chars.len() || !chars[j].1.is_whitespace() {
            continue;
        }
        while j < chars.len() && chars[j].1.is_whitespace() {
            j += 1;
        }
        if j >= chars.len() || !chars[j].1.is_uppercase() {
            continue;
        }
        if c == '.' {
            let word_start = body[..pos]
                .rfind(char::is_whitespace)
                .map_or(0, |p| p + 1);
            if is_abbreviation(&body[word_start..=pos]) {
                continue;
            }
        }
        boundaries.push((pos + c.len_utf8(), chars[j].0));
    }

    let mut sentences = Vec::new();
    let mut offsets = Vec::new();
    let mut cursor = 0;
    for (sentence_end, next_start) in boundaries {
        sentences.push(body[cursor..sentence_end].to_string());
        offsets.push((start + cursor, start + sentence_end));
        cursor = next_start;
    }
    sentences.push(body[cursor..].to_string());
    offsets.push((start + cursor, start + body.len()));
    SentenceSplit { sentences, offsets }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn initials_do_not_split() {
        let s = split_sentences("A. B. Smith went home.");
        assert_eq!(s.sentences, vec!["A. B. Smith went home."]);
    }

    #[test]
    fn single_sentence() {
        assert_eq!(split_sentences("Hello world.").sentences, vec!["Hello world."]);
    }

    #[test]
    fn three_sentences() {
        assert_eq!(
            split_sentences("One. Two. Three.").sentences,
            vec!["One.", "Two.", "Three."]
        );
    }

    #[test]
    fn abbreviations_and_lowercase_continuations() {
        assert_eq!(
            split_sentences("Dr. Who arrived. It rained! Then e.g. stuff? yes.").sentences,
            vec!["Dr. Who arrived.", "It rained!", "Then e.g. stuff? yes."]
        );
    }

    #[test]
    fn blank_text_falls_back_to_one_sentence() {
        assert_eq!(split_sentences("   ").sentences, vec![""]);
        assert_eq!(split_sentences("no punctuation").sentences, vec!["no punctuation"]);
    }

    #[test]
    fn offsets_index_original_text() {
        let text = "  The cat sat.  The dog ran.\n";
        let s = split_sentences(text);
        for (sentence, (a, b)) in s.sentences.iter().zip(&s.offsets) {
            assert_eq!(&text[*a..*b], sentence);
        }
    }

    #[test]
    fn words_drop_punctuation() {
        assert_eq!(words("The cat, on-the MAT!"), vec!["the", "cat", "on", "the", "mat"]);
        assert!(words("...").is_empty());
    }

    proptest! {
        #[test]
        fn split_reconstructs_trimmed_text(text in "[A-Za-z .!?\n]{0,60}") {
            let s = split_sentences(&text);
            prop_assert!(!s.is_empty());
            let trimmed = text.trim();
            let mut rebuilt = String::new();
            for (i, (a, b)) in s.offsets.iter().enumerate() {
                if i > 0 {
                    rebuilt.push_str(&text[s.offsets[i - 1].1..*a]);
                }
                prop_assert_eq!(&text[*a..*b], s.sentences[i].as_str());
                rebuilt.push_str(&s.sentences[i]);
            }
            prop_assert_eq!(rebuilt, trimmed);
        }
    }
}
