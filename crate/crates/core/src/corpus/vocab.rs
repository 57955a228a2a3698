//! Word-level vocabulary.
//!
//! Tokens are whitespace-separated words. Id 0 is reserved for the
//! end-of-text token; every other id is assigned by first occurrence in the
//! corpora handed to [`Vocabulary::build`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved end-of-text token, always id 0.
pub const EOT: &str = "<eot>";
pub const EOT_ID: u32 = 0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Assign ids by first occurrence across the given corpora lines.
    pub fn build(corpora: &[&[Vec<String>]]) -> Self {
        let mut tokens = vec![EOT.to_string()];
        let mut index = HashMap::from([(EOT.to_string(), EOT_ID)]);
        for corpus in corpora {
            for line in *corpus {
                for word in line {
                    if !index.contains_key(word) {
                        index.insert(word.clone(), tokens.len() as u32);
                        tokens.push(word.clone());
                    }
                }
            }
        }
        Self { tokens, index }
    }

    /// Rebuild from an ordered token list (checkpoint load path).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(EOT) {
            return Err(Error::Format(format!(
                "vocabulary must start with the end-of-text token {EOT:?}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate token {t:?} in vocabulary")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn require_id(&self, token: &str) -> Result<u32> {
        self.id(token)
            .ok_or_else(|| Error::Vocab(format!("unknown token {token:?}")))
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Append a new token, returning its id.
    pub fn push_token(&mut self, token: &str) -> Result<u32> {
        if self.contains(token) {
            return Err(Error::Vocab(format!("token {token:?} already present")));
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        Ok(id)
    }

    pub fn encode(&self, words: &[String]) -> Result<Vec<u32>> {
        words.iter().map(|w| self.require_id(w)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.token(id)
                    .map(str::to_string)
                    .ok_or_else(|| Error::Vocab(format!("id {id} out of range")))
            })
            .collect()
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;
    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Vec<String> {
        v.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn id_zero_is_end_of_text() {
        let lines = [line("a b c")];
        let v = Vocabulary::build(&[&lines]);
        assert_eq!(v.token(EOT_ID), Some(EOT));
        assert_eq!(v.id("a"), Some(1));
    }

    #[test]
    fn round_trip_on_known_tokens() {
        let lines = [line("the river hums at dawn"), line("the market opens")];
        let v = Vocabulary::build(&[&lines]);
        for l in &lines {
            let ids = v.encode(l).unwrap();
            assert_eq!(&v.decode(&ids).unwrap(), l);
        }
    }

    #[test]
    fn unknown_token_is_vocab_error() {
        let lines = [line("a")];
        let v = Vocabulary::build(&[&lines]);
        assert!(matches!(v.encode(&line("b")), Err(Error::Vocab(_))));
    }

    #[test]
    fn push_token_appends_at_end() {
        let lines = [line("a b")];
        let mut v = Vocabulary::build(&[&lines]);
        let n = v.len() as u32;
        assert_eq!(v.push_token("<bias>").unwrap(), n);
        assert!(v.push_token("a").is_err());
    }
}
