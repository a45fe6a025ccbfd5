//! Word-level vocabulary and tokenizer.
//!
//! Tokens are whitespace-separated words with leading/trailing punctuation
//! split off as separate tokens. Unknown words map to a reserved id, so
//! tokenization is total. Detokenization joins tokens with single spaces;
//! round-trips hold up to whitespace normalization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Reserved id for out-of-vocabulary words.
pub const UNK_ID: u32 = 0;
/// Reserved id for the end-of-text token.
pub const EOS_ID: u32 = 1;
/// Reserved id for the start-of-sequence token (conditioning anchor; the
/// model prepends it internally, it never appears in token sequences
/// produced by `tokenize`).
pub const BOS_ID: u32 = 2;

const UNK_TOKEN: &str = "<unk>";
const EOS_TOKEN: &str = "<eos>";
const BOS_TOKEN: &str = "<bos>";

const PUNCT: &[char] = &['.', ',', '!', '?', ';', ':', '"', '\'', '(', ')', '[', ']'];

/// A tokenized string: vocabulary ids plus the originating text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub text: String,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Fixed word-level vocabulary built from a corpus.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, u32>,
}

/// Splits text into word and punctuation tokens.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut rest = word;
        let mut lead = Vec::new();
        while let Some(c) = rest.chars().next() {
            if PUNCT.contains(&c) {
                lead.push(c.to_string());
                rest = &rest[c.len_utf8()..];
            } else {
                break;
            }
        }
        let mut trail = Vec::new();
        while let Some(c) = rest.chars().last() {
            if PUNCT.contains(&c) {
                trail.push(c.to_string());
                rest = &rest[..rest.len() - c.len_utf8()];
            } else {
                break;
            }
        }
        out.extend(lead);
        if !rest.is_empty() {
            out.push(rest.to_string());
        }
        out.extend(trail.into_iter().rev());
    }
    out
}

impl Vocabulary {
    /// Builds a vocabulary from corpus texts. Word order in the result is
    /// deterministic (reserved tokens first, then sorted words).
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words = std::collections::BTreeSet::new();
        for text in texts {
            for tok in split_words(text) {
                words.insert(tok);
            }
        }
        let mut tokens = vec![
            UNK_TOKEN.to_string(),
            EOS_TOKEN.to_string(),
            BOS_TOKEN.to_string(),
        ];
        tokens.extend(
            words
                .into_iter()
                .filter(|w| w != UNK_TOKEN && w != EOS_TOKEN && w != BOS_TOKEN),
        );
        let mut vocab = Vocabulary {
            tokens,
            index: BTreeMap::new(),
        };
        vocab.rebuild_index();
        vocab
    }

    /// Rebuilds the word → id index from the token list (needed after
    /// deserialization, which skips the index).
    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(UNK_TOKEN)
    }

    /// Tokenizes text. Total: unknown words become [`UNK_ID`].
    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let ids = split_words(text)
            .into_iter()
            .map(|w| self.index.get(&w).copied().unwrap_or(UNK_ID))
            .collect();
        TokenSequence {
            ids,
            text: text.to_string(),
        }
    }

    /// Joins tokens with single spaces. Reserved tokens are rendered
    /// literally except that output stops at the first end-of-text token.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let mut parts = Vec::new();
        for &id in ids {
            if id == EOS_ID {
                break;
            }
            if id == BOS_ID {
                continue;
            }
            parts.push(self.token(id).to_string());
        }
        parts.join(" ")
    }
}
