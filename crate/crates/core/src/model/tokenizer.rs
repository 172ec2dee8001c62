//! Character-level tokenizer over a fixed 63-symbol alphabet plus an
//! end-of-sequence id.
//!
//! | ids    | symbols                     |
//! |--------|-----------------------------|
//! | 0      | space                       |
//! | 1–26   | `a`–`z`                     |
//! | 27–52  | `A`–`Z`                     |
//! | 53–62  | `. , ? ! : ; ' - ( )`       |
//! | 63     | end of sequence (no glyph)  |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ALPHABET: &str = " abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ.,?!:;'-()";
pub const VOCAB_SIZE: usize = 64;
pub const EOS: u32 = 63;

/// Ordered token ids.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn new(tokens: Vec<u32>) -> Self {
        TokenSequence(tokens)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    /// Concatenation `self ++ other`.
    pub fn concat(&self, other: &TokenSequence) -> TokenSequence {
        let mut v = Vec::with_capacity(self.len() + other.len());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(&other.0);
        TokenSequence(v)
    }

    pub fn check_vocab(&self, vocab: usize) -> Result<()> {
        match self.0.iter().find(|&&t| t as usize >= vocab) {
            Some(&token) => Err(Error::TokenOutOfRange { token, vocab }),
            None => Ok(()),
        }
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(v: Vec<u32>) -> Self {
        TokenSequence(v)
    }
}

pub fn char_id(c: char) -> Result<u32> {
    ALPHABET.chars().position(|a| a == c).map(|p| p as u32).ok_or(Error::UnknownCharacter(c))
}

pub fn encode(text: &str) -> Result<TokenSequence> {
    text.chars().map(char_id).collect::<Result<Vec<_>>>().map(TokenSequence)
}

/// Encodes `text` and appends the end-of-sequence id.
pub fn encode_response(text: &str) -> Result<TokenSequence> {
    let mut t = encode(text)?;
    t.0.push(EOS);
    Ok(t)
}

/// Renders tokens up to (excluding) the first end-of-sequence id.
pub fn decode(tokens: &[u32]) -> String {
    let table: Vec<char> = ALPHABET.chars().collect();
    tokens.iter().take_while(|&&t| t != EOS).map(|&t| table.get(t as usize).copied().unwrap_or('?')).collect()
}

pub fn is_representable(text: &str) -> bool {
    text.chars().all(|c| ALPHABET.contains(c))
}
