use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::wordpiece::content_len;
use super::{DataError, Result, SentencePair, Vocab};
use crate::ids::{TokenGrid, TokenId};

/// Padded pair batch. Both sides share one sequence length.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids_a: TokenGrid,
    pub mask_a: Vec<u8>,
    pub ids_b: TokenGrid,
    pub mask_b: Vec<u8>,
    pub scores: Option<Vec<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids_a.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Truncates to `max_len`, keeping a trailing separator in place.
fn truncate(ids: &[TokenId], max_len: usize, vocab: &Vocab) -> Vec<TokenId> {
    if ids.len() <= max_len {
        return ids.to_vec();
    }
    let mut out = ids[..max_len].to_vec();
    if let (Some(sep), Some(&last)) = (vocab.sep(), ids.last()) {
        if last == sep {
            out[max_len - 1] = sep;
        }
    }
    out
}

/// Pads rows to the longest one; the mask is 1 exactly on real tokens.
pub fn pad_rows(rows: &[Vec<TokenId>], seq: usize, pad: TokenId) -> (TokenGrid, Vec<u8>) {
    let mut ids = Vec::with_capacity(rows.len() * seq);
    let mut mask = Vec::with_capacity(rows.len() * seq);
    for row in rows {
        ids.extend_from_slice(row);
        mask.extend(std::iter::repeat_n(1, row.len()));
        ids.extend(std::iter::repeat_n(pad, seq - row.len()));
        mask.extend(std::iter::repeat_n(0, seq - row.len()));
    }
    let grid = TokenGrid::new(rows.len(), seq, ids).expect("rows padded to seq");
    (grid, mask)
}

/// Builds one batch from the given pairs in order, without shuffling.
pub fn collate(pairs: &[&SentencePair], max_len: usize, vocab: &Vocab) -> Result<Batch> {
    let a: Vec<Vec<TokenId>> = pairs.iter().map(|p| truncate(&p.ids_a, max_len, vocab)).collect();
    let b: Vec<Vec<TokenId>> = pairs.iter().map(|p| truncate(&p.ids_b, max_len, vocab)).collect();
    let seq = a.iter().chain(&b).map(Vec::len).max().unwrap_or(0);
    let (ids_a, mask_a) = pad_rows(&a, seq, vocab.pad());
    let (ids_b, mask_b) = pad_rows(&b, seq, vocab.pad());
    let scores = pairs.iter().map(|p| p.score).collect::<Option<Vec<f64>>>();
    Ok(Batch {
        ids_a,
        mask_a,
        ids_b,
        mask_b,
        scores,
    })
}

/// Shuffles by `seed`, drops the final partial batch and pads each batch to
/// its own longest row (capped at `max_len`).
pub fn make_batches(
    pairs: &[SentencePair],
    batch_size: usize,
    max_len: usize,
    vocab: &Vocab,
    seed: u64,
) -> Result<Vec<Batch>> {
    if batch_size < 2 {
        return Err(DataError::BatchTooSmall(batch_size));
    }
    let min = 1 + vocab.cls().is_some() as usize + vocab.sep().is_some() as usize;
    if max_len < min {
        return Err(DataError::MaxLenTooSmall { max_len, min });
    }
    for (i, p) in pairs.iter().enumerate() {
        if content_len(&p.ids_a, vocab) == 0 || content_len(&p.ids_b, vocab) == 0 {
            return Err(DataError::EmptyTokenization(i));
        }
        if let Some(&id) = p.ids_a.iter().chain(&p.ids_b).find(|&&id| id as usize >= vocab.len()) {
            return Err(DataError::IdOutOfRange {
                row: i,
                id,
                vocab_size: vocab.len(),
            });
        }
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
        .chunks_exact(batch_size)
        .map(|chunk| {
            let refs: Vec<&SentencePair> = chunk.iter().map(|&i| &pairs[i]).collect();
            collate(&refs, max_len, vocab)
        })
        .collect()
}
