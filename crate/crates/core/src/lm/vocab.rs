use std::collections::HashMap;

use super::{TokenId, EOS_TOKEN};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VocabError {
    #[error("word `{0}` is not in the vocabulary")]
    UnknownWord(String),
    #[error("vocabulary must start with the end-of-sequence marker and list unique words")]
    Malformed,
}

/// Word-level vocabulary for synthetic corpora.
///
/// Id 0 is the end-of-sequence marker. Punctuation words (`.`, `!`, `?`,
/// `,`) attach to the preceding word when rendering, and the first word of
/// every sentence is capitalised, so rendered text splits into sentences
/// the same way natural prose does. Encoding lowercases and separates
/// trailing punctuation, making `encode(decode(t)) == t` for EOS-free `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

pub const EOS_WORD: &str = "<eos>";

const DEFAULT_WORDS: [&str; 8] = [EOS_WORD, ".", "the", "cat", "dog", "sat", "ran", "home"];

impl Default for Vocab {
    fn default() -> Self {
        Self::new(DEFAULT_WORDS.iter().map(|w| w.to_string()).collect())
            .expect("default vocabulary is well formed")
    }
}

fn is_punct(word: &str) -> bool {
    matches!(word, "." | "!" | "?" | ",")
}

impl Vocab {
    pub fn new(words: Vec<String>) -> Result<Self, VocabError> {
        if words.first().map(String::as_str) != Some(EOS_WORD) {
            return Err(VocabError::Malformed);
        }
        let mut index = HashMap::new();
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.chars().any(char::is_whitespace) || index.insert(w.clone(), i as TokenId).is_some() {
                return Err(VocabError::Malformed);
            }
        }
        Ok(Self { words, index })
    }

    /// `<eos>` followed by `t1 .. t{n-1}`; used for abstract token experiments.
    pub fn synthetic(size: usize) -> Self {
        let words = std::iter::once(EOS_WORD.to_string())
            .chain((1..size).map(|i| format!("t{i}")))
            .collect();
        Self::new(words).expect("synthetic vocabulary is well formed")
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    /// Tokenises text into ids, without appending EOS.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, VocabError> {
        let mut out = Vec::new();
        for raw in text.split_whitespace() {
            let lower = raw.to_lowercase();
            let body = lower.trim_end_matches(['.', '!', '?', ',']);
            if !body.is_empty() {
                out.push(self.id(body).ok_or_else(|| VocabError::UnknownWord(body.to_string()))?);
            }
            for p in lower[body.len()..].chars() {
                let p = p.to_string();
                out.push(self.id(&p).ok_or(VocabError::UnknownWord(p))?);
            }
        }
        Ok(out)
    }

    /// Tokenises text and appends EOS.
    pub fn encode_summary(&self, text: &str) -> Result<Vec<TokenId>, VocabError> {
        let mut tokens = self.encode(text)?;
        tokens.push(EOS_TOKEN);
        Ok(tokens)
    }

    /// Renders ids as text, stopping at the first EOS.
    pub fn decode(&self, tokens: &[TokenId]) -> String {
        let mut out = String::new();
        let mut sentence_start = true;
        for &t in tokens.iter().take_while(|&&t| t != EOS_TOKEN) {
            let word = self.word(t).unwrap_or("<unk>");
            if is_punct(word) {
                out.push_str(word);
                sentence_start = word != ",";
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            if sentence_start {
                let mut chars = word.chars();
                if let Some(first) = chars.next() {
                    out.extend(first.to_uppercase());
                    out.push_str(chars.as_str());
                }
            } else {
                out.push_str(word);
            }
            sentence_start = false;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_sentences() {
        let v = Vocab::default();
        let toks = v.encode("the cat sat. the dog ran home.").unwrap();
        assert_eq!(v.decode(&toks), "The cat sat. The dog ran home.");
        assert_eq!(v.encode(&v.decode(&toks)).unwrap(), toks);
    }

    #[test]
    fn decode_stops_at_eos() {
        let v = Vocab::default();
        assert_eq!(v.decode(&[3, 0, 4]), "Cat");
        assert_eq!(v.decode(&[0]), "");
    }

    #[test]
    fn unknown_words_fail() {
        assert_eq!(
            Vocab::default().encode("the zebra").unwrap_err(),
            VocabError::UnknownWord("zebra".into())
        );
    }

    #[test]
    fn synthetic_vocab() {
        let v = Vocab::synthetic(4);
        assert_eq!(v.words(), &["<eos>", "t1", "t2", "t3"]);
        assert_eq!(v.decode(&[1, 3, 0]), "T1 t3");
    }
}
