//! Word-level tokenizer.
//!
//! Text is lowercased and split into words (alphanumeric runs, optionally
//! joined by inner `-` or `'`) and single punctuation characters.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SEP: usize = 4;
pub const SPECIALS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "<sep>"];

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Lowercased word and punctuation tokens of `text`.
pub fn split_words(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if is_word_char(c) {
            let start = i;
            while i < chars.len() {
                if is_word_char(chars[i]) {
                    i += 1;
                } else if (chars[i] == '-' || chars[i] == '\'')
                    && i + 1 < chars.len()
                    && is_word_char(chars[i + 1])
                {
                    i += 2;
                } else {
                    break;
                }
            }
            out.push(chars[start..i].iter().collect());
        } else {
            out.push(c.to_string());
            i += 1;
        }
    }
    out
}

fn is_punct_token(tok: &str) -> bool {
    let mut cs = tok.chars();
    matches!((cs.next(), cs.next()), (Some(c), None) if !is_word_char(c))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for Tokenizer {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Tokenizer> for Vec<String> {
    fn from(t: Tokenizer) -> Self {
        t.tokens
    }
}

impl Tokenizer {
    /// Rebuilds a tokenizer from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Schema("token list must start with the special tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Specials first, then `forced` tokens, then the remaining words of
    /// `texts` by descending frequency (ties lexicographic) up to `max_vocab`.
    pub fn build<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        forced: &[String],
        max_vocab: usize,
    ) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            for w in split_words(text) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        let mut forced_words: Vec<String> = forced.iter().flat_map(|f| split_words(f)).collect();
        forced_words.sort();
        forced_words.dedup();
        for w in forced_words {
            if seen.insert(w.clone()) {
                tokens.push(w);
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (w, _) in ranked {
            if tokens.len() >= max_vocab {
                break;
            }
            if seen.insert(w.clone()) {
                tokens.push(w);
            }
        }
        Self::from_tokens(tokens).expect("built token list is well formed")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        split_words(text)
            .iter()
            .map(|w| self.id(w).unwrap_or(UNK))
            .collect()
    }

    /// Joins tokens with spaces, without a space before punctuation. Pad,
    /// bos, eos and sep are dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            if matches!(id, PAD | BOS | EOS | SEP) {
                continue;
            }
            let tok = self.tokens.get(id).map_or(SPECIALS[UNK], String::as_str);
            if !out.is_empty() && !is_punct_token(tok) {
                out.push(' ');
            }
            out.push_str(tok);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_words_and_punctuation() {
        assert_eq!(
            split_words("Based on the X-ray, patient's BP: 120/80."),
            ["based", "on", "the", "x-ray", ",", "patient's", "bp", ":", "120", "/", "80", "."]
        );
        assert_eq!(split_words("a- b"), ["a", "-", "b"]);
    }

    #[test]
    fn unseen_word_is_unk() {
        let t = Tokenizer::build(["alpha beta"], &[], 100);
        assert_eq!(t.encode("gamma"), vec![UNK]);
    }

    #[test]
    fn forced_terms_always_included() {
        let t = Tokenizer::build(["a a a b"], &["basal ganglia".into()], 8);
        assert!(t.id("basal").is_some() && t.id("ganglia").is_some());
        assert_eq!(t.len(), 8);
        assert_eq!(t.id("a"), Some(7));
        assert_eq!(t.id("b"), None);
    }

    #[test]
    fn frequency_ties_are_lexicographic() {
        let t = Tokenizer::build(["b a c c"], &[], 100);
        assert_eq!(&t.tokens()[5..], ["c", "a", "b"]);
    }

    #[test]
    fn decode_attaches_punctuation() {
        let t = Tokenizer::build(["diagnoses : shock ; sepsis ."], &[], 100);
        let ids = t.encode("Diagnoses: shock; sepsis .");
        assert_eq!(t.decode(&ids), "diagnoses: shock; sepsis.");
    }
}
