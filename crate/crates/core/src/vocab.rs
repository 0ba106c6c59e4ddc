use std::collections::HashMap;

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Dense bijection between token strings and ids in `[0, len)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary from an ordered word list; duplicates are an error.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary::new();
        for (i, word) in words.into_iter().enumerate() {
            let word = word.into();
            if vocab.index.contains_key(&word) {
                return Err(Error::parse(i + 1, format!("duplicate word {word:?}")));
            }
            vocab.insert(word);
        }
        Ok(vocab)
    }

    /// Returns the id of `word`, adding it if absent.
    pub fn insert(&mut self, word: impl Into<String>) -> TokenId {
        let word = word.into();
        if let Some(&id) = self.index.get(&word) {
            return id;
        }
        let id = self.words.len() as TokenId;
        self.index.insert(word.clone(), id);
        self.words.push(word);
        id
    }

    pub fn get(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> impl ExactSizeIterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    /// Adds every token of every sentence in first-occurrence order.
    pub fn extend<I, S, T>(&mut self, sentences: I)
    where
        I: IntoIterator<Item = S>,
        S: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        for sentence in sentences {
            for token in sentence {
                let token = token.as_ref();
                if self.get(token).is_none() {
                    self.insert(token);
                }
            }
        }
    }
}

/// Assigns ids by first occurrence across `sentences`. No count threshold.
pub fn build_vocab<I, S, T>(sentences: I) -> Vocabulary
where
    I: IntoIterator<Item = S>,
    S: IntoIterator<Item = T>,
    T: AsRef<str>,
{
    let mut vocab = Vocabulary::new();
    vocab.extend(sentences);
    vocab
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    #[test]
    fn first_occurrence_order() {
        let vocab = build_vocab(["a b", "b c"].iter().map(|s| tokenize(s)));
        assert_eq!(vocab.get("a"), Some(0));
        assert_eq!(vocab.get("b"), Some(1));
        assert_eq!(vocab.get("c"), Some(2));
        assert_eq!(vocab.len(), 3);
    }

    #[test]
    fn empty_input_gives_empty_vocab() {
        let vocab = build_vocab(Vec::<Vec<String>>::new());
        assert!(vocab.is_empty());
    }

    #[test]
    fn repeated_tokens_dedup() {
        let vocab = build_vocab([tokenize("x x x")]);
        assert_eq!(vocab.len(), 1);
        assert_eq!(vocab.get("x"), Some(0));
        assert_eq!(vocab.word(0), Some("x"));
    }

    #[test]
    fn from_words_rejects_duplicates() {
        assert!(Vocabulary::from_words(["a", "b", "a"]).is_err());
        let vocab = Vocabulary::from_words(["a", "b"]).unwrap();
        assert_eq!(vocab.word(1), Some("b"));
    }
}
