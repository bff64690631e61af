//! Greedy longest-match-first subword tokenization over a line-oriented vocabulary.
//!
//! Token values are 1-based line numbers of the vocabulary file. Value 0 is
//! never handed out: the decoder uses it as its begin-of-code marker.
//!
//! Normalization is NFC, lowercase, then a split on whitespace and on
//! punctuation. Every punctuation character becomes its own word.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const DEFAULT_CONTINUATION_PREFIX: &str = "##";
pub const DEFAULT_UNKNOWN_TOKEN: &str = "[UNK]";

/// Token value as stored in codes. Valid values lie in `[1, V]`.
pub type TokenValue = u32;

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenValue>,
    continuation_prefix: String,
    unknown: Option<TokenValue>,
}

impl Vocabulary {
    /// Builds a vocabulary from tokens in value order (first token has value 1).
    ///
    /// The unknown token defaults to `[UNK]` when present.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(Error::EmptyLine { line: i + 1 });
            }
            if index.insert(tok.clone(), (i + 1) as TokenValue).is_some() {
                return Err(Error::DuplicateToken {
                    token: tok.clone(),
                    line: i + 1,
                });
            }
        }
        let unknown = index.get(DEFAULT_UNKNOWN_TOKEN).copied();
        Ok(Self {
            tokens,
            index,
            continuation_prefix: DEFAULT_CONTINUATION_PREFIX.to_string(),
            unknown,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text
            .strip_suffix('\n')
            .unwrap_or(text)
            .split('\n')
            .map(|l| l.strip_suffix('\r').unwrap_or(l))
            .collect();
        if lines.len() == 1 && lines[0].is_empty() {
            return Self::from_tokens(Vec::<String>::new());
        }
        Self::from_tokens(lines)
    }

    pub fn with_continuation_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.continuation_prefix = prefix.into();
        self
    }

    /// Sets the value emitted for words without a segmentation. `None` makes
    /// such words an error.
    pub fn with_unknown(mut self, value: Option<TokenValue>) -> Result<Self> {
        if let Some(v) = value {
            if v == 0 || v as usize > self.tokens.len() {
                return Err(Error::InvalidParameter(format!(
                    "unknown token value {v} outside [1, {}]",
                    self.tokens.len()
                )));
            }
        }
        self.unknown = value;
        Ok(self)
    }

    /// Number of tokens, the `V` of the tokenizer.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn continuation_prefix(&self) -> &str {
        &self.continuation_prefix
    }

    pub fn unknown(&self) -> Option<TokenValue> {
        self.unknown
    }

    pub fn value_of(&self, token: &str) -> Option<TokenValue> {
        self.index.get(token).copied()
    }

    pub fn token(&self, value: TokenValue) -> Option<&str> {
        if value == 0 {
            return None;
        }
        self.tokens.get(value as usize - 1).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Surface form of a token with the continuation prefix removed.
    pub fn surface(&self, value: TokenValue) -> Option<&str> {
        self.token(value)
            .map(|t| t.strip_prefix(self.continuation_prefix.as_str()).unwrap_or(t))
    }

    pub fn tokenize(&self, name: &str) -> Result<TokenSequence> {
        let words = normalize(name);
        if words.is_empty() {
            return Err(Error::EmptyName);
        }
        let mut values = Vec::with_capacity(words.len() * 2);
        for word in &words {
            match self.segment(word) {
                Some(pieces) => values.extend(pieces),
                None => match self.unknown {
                    Some(unk) => values.push(unk),
                    None => return Err(Error::MissingUnknownToken { word: word.clone() }),
                },
            }
        }
        Ok(TokenSequence {
            values,
            source_name: name.to_string(),
        })
    }

    /// Greedy longest-match-first segmentation of one normalized word.
    fn segment(&self, word: &str) -> Option<Vec<TokenValue>> {
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let mut pieces = Vec::new();
        let mut start = 0;
        let mut candidate = String::with_capacity(word.len() + self.continuation_prefix.len());
        while start + 1 < bounds.len() {
            let mut found = None;
            for end in (start + 1..bounds.len()).rev() {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(&self.continuation_prefix);
                }
                candidate.push_str(&word[bounds[start]..bounds[end]]);
                if let Some(&v) = self.index.get(candidate.as_str()) {
                    found = Some((v, end));
                    break;
                }
            }
            let (value, end) = found?;
            pieces.push(value);
            start = end;
        }
        Some(pieces)
    }
}

/// Loads a vocabulary file: UTF-8, one token per line, value = line number.
pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vocabulary> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Vocabulary::parse(&text)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub values: Vec<TokenValue>,
    pub source_name: String,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_control())
}

/// NFC + lowercase, split on whitespace, punctuation characters as standalone words.
pub fn normalize(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect::<String>().to_lowercase();
    let mut words = Vec::new();
    for chunk in normalized.split_whitespace() {
        let mut current = String::new();
        for c in chunk.chars() {
            if c.is_control() {
                continue;
            }
            if is_punctuation(c) {
                if !current.is_empty() {
                    words.push(std::mem::take(&mut current));
                }
                words.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words
}
