//! Token identifiers and rectangular `[batch, seq]` id grids.

use thiserror::Error;

/// Integer index a tokenizer assigns to a vocabulary entry.
pub type TokenId = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("id grid of {batch}x{seq} needs {expected} ids, got {got}")]
pub struct GridShapeError {
    pub batch: usize,
    pub seq: usize,
    pub expected: usize,
    pub got: usize,
}

/// Row-major `[batch, seq]` matrix of token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGrid {
    batch: usize,
    seq: usize,
    ids: Vec<TokenId>,
}

impl TokenGrid {
    pub fn new(batch: usize, seq: usize, ids: Vec<TokenId>) -> Result<Self, GridShapeError> {
        if batch * seq != ids.len() {
            return Err(GridShapeError {
                batch,
                seq,
                expected: batch * seq,
                got: ids.len(),
            });
        }
        Ok(Self { batch, seq, ids })
    }

    /// Builds a grid from nested rows, which must all have the same length.
    pub fn from_rows(rows: &[Vec<TokenId>]) -> Result<Self, GridShapeError> {
        let seq = rows.first().map_or(0, Vec::len);
        let ids: Vec<TokenId> = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), seq, ids)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seq(&self) -> usize {
        self.seq
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn row(&self, b: usize) -> &[TokenId] {
        &self.ids[b * self.seq..(b + 1) * self.seq]
    }

    pub fn get(&self, b: usize, s: usize) -> TokenId {
        self.ids[b * self.seq + s]
    }
}
