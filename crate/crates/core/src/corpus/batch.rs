use rand::seq::SliceRandom;

use crate::error::{invalid, Result};
use crate::rng::{self, Rng64, RngState};

/// Endless stream of document-index mini-batches. Each epoch is a fresh
/// uniform permutation of `0..N` cut into batches of `m`; the last batch of
/// an epoch may be short.
#[derive(Debug, Clone)]
pub struct MinibatchIter {
    num_docs: usize,
    batch_size: usize,
    rng: Rng64,
    perm: Vec<usize>,
    pos: usize,
}

/// Checkpointable position of a [`MinibatchIter`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinibatchState {
    pub num_docs: usize,
    pub batch_size: usize,
    pub rng: RngState,
    pub perm: Vec<usize>,
    pub pos: usize,
}

impl MinibatchIter {
    pub fn new(num_docs: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > num_docs {
            return Err(invalid(format!("batch size {batch_size} not in [1, {num_docs}]")));
        }
        Ok(MinibatchIter { num_docs, batch_size, rng: rng::rng_from(seed), perm: Vec::new(), pos: 0 })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn state(&self) -> MinibatchState {
        MinibatchState {
            num_docs: self.num_docs,
            batch_size: self.batch_size,
            rng: RngState::capture(&self.rng),
            perm: self.perm.clone(),
            pos: self.pos,
        }
    }

    pub fn from_state(s: &MinibatchState) -> Self {
        MinibatchIter {
            num_docs: s.num_docs,
            batch_size: s.batch_size,
            rng: s.rng.restore(),
            perm: s.perm.clone(),
            pos: s.pos,
        }
    }
}

impl Iterator for MinibatchIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pos >= self.perm.len() {
            self.perm = (0..self.num_docs).collect();
            self.perm.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.perm.len());
        let batch = self.perm[self.pos..end].to_vec();
        self.pos = end;
        Some(batch)
    }
}
