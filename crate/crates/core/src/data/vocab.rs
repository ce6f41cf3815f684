use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{DataError, Result};
use crate::ids::TokenId;

/// Literal strings used to resolve the special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecialTokens {
    pub pad: String,
    pub unk: String,
    pub cls: String,
    pub sep: String,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        Self {
            pad: "[PAD]".into(),
            unk: "[UNK]".into(),
            cls: "[CLS]".into(),
            sep: "[SEP]".into(),
        }
    }
}

/// Dense token list; the line number of a token is its id.
///
/// Padding and unknown tokens are mandatory. Sequence framing tokens are used
/// when present and skipped otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    pad: TokenId,
    unk: TokenId,
    cls: Option<TokenId>,
    sep: Option<TokenId>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>, specials: &SpecialTokens) -> Result<Self> {
        if tokens.is_empty() {
            return Err(DataError::EmptyVocab);
        }
        if tokens.len() > TokenId::MAX as usize {
            return Err(DataError::VocabTooLarge(tokens.len()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if let Some(first) = index.insert(tok.clone(), i as TokenId) {
                return Err(DataError::DuplicateToken {
                    token: tok.clone(),
                    first: first as usize,
                    second: i,
                });
            }
        }
        let find = |s: &str| index.get(s).copied();
        let missing: Vec<String> = [&specials.pad, &specials.unk]
            .into_iter()
            .filter(|s| find(s).is_none())
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(DataError::MissingSpecials(missing));
        }
        if tokens.len() < 2 {
            return Err(DataError::EmptyVocab);
        }
        Ok(Self {
            pad: find(&specials.pad).unwrap(),
            unk: find(&specials.unk).unwrap(),
            cls: find(&specials.cls),
            sep: find(&specials.sep),
            tokens,
            index,
        })
    }

    /// Special tokens followed by `tok0, tok1, ...` up to `size` entries.
    pub fn synthetic(size: usize) -> Result<Self> {
        let specials = SpecialTokens::default();
        let mut tokens = vec![specials.pad.clone(), specials.unk.clone(), specials.cls.clone(), specials.sep.clone()];
        if size < tokens.len() {
            return Err(DataError::InsufficientVocab {
                needed: tokens.len(),
                available: size,
            });
        }
        tokens.extend((0..size - tokens.len()).map(|i| format!("tok{i}")));
        Self::from_tokens(tokens, &specials)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pad(&self) -> TokenId {
        self.pad
    }

    pub fn unk(&self) -> TokenId {
        self.unk
    }

    pub fn cls(&self) -> Option<TokenId> {
        self.cls
    }

    pub fn sep(&self) -> Option<TokenId> {
        self.sep
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id == self.pad || id == self.unk || Some(id) == self.cls || Some(id) == self.sep
    }

    /// One token per line, matching the loader's format.
    pub fn to_file_string(&self) -> String {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        out
    }
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    load_vocab_with(path, &SpecialTokens::default())
}

pub fn load_vocab_with(path: &Path, specials: &SpecialTokens) -> Result<Vocab> {
    let text = fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let tokens: Vec<String> = text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
    Vocab::from_tokens(tokens, specials)
}
