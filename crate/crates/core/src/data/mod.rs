//! Vocabulary files, WordPiece tokenization, pair datasets and batching.

mod batch;
mod corpus;
mod vocab;
mod wordpiece;

pub use batch::{collate, make_batches, pad_rows, Batch};
pub use corpus::{load_pairs_jsonl, load_sts_tsv, synth_pairs, topic_pools, LoadSummary, SentencePair};
pub use vocab::{load_vocab, load_vocab_with, SpecialTokens, Vocab};
pub use wordpiece::{content_len, frame, pre_tokenize, tokenize, tokenize_words};

use thiserror::Error;

use crate::ids::TokenId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("vocabulary is empty or has fewer than 2 tokens")]
    EmptyVocab,
    #[error("vocabulary has {0} tokens, more than the id type can hold")]
    VocabTooLarge(usize),
    #[error("duplicate token {token:?} on lines {first} and {second}")]
    DuplicateToken { token: String, first: usize, second: usize },
    #[error("vocabulary is missing special tokens: {}", .0.join(", "))]
    MissingSpecials(Vec<String>),
    #[error("max_len {max_len} is below the minimum {min}")]
    MaxLenTooSmall { max_len: usize, min: usize },
    #[error("{path}: no usable rows among {total} lines")]
    NoUsableRows { path: String, total: usize },
    #[error("synthetic corpus needs at least 2 topics, got {0}")]
    TooFewTopics(usize),
    #[error("vocabulary too small: need {needed} eligible tokens, have {available}")]
    InsufficientVocab { needed: usize, available: usize },
    #[error("batch size {0} is below 2; contrastive batches need negatives")]
    BatchTooSmall(usize),
    #[error("row {0} has an empty tokenization")]
    EmptyTokenization(usize),
    #[error("row {row}: token id {id} out of range for vocabulary of {vocab_size}")]
    IdOutOfRange { row: usize, id: TokenId, vocab_size: usize },
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;
