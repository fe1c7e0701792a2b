use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// A fresh uniform size-B subset every update.
    #[default]
    PerUpdate,
    /// Consecutive slices of a per-epoch permutation; a trailing partial
    /// slice is dropped.
    EpochShuffle,
}

/// Draws minibatch index sets from `0..n`.
#[derive(Debug)]
pub struct BatchSampler {
    n: usize,
    batch: usize,
    mode: SamplingMode,
    rng: Rng,
    perm: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, mode: SamplingMode, rng: Rng) -> Result<Self> {
        if batch == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if batch > n {
            return Err(Error::InvalidArgument(format!("batch size {batch} exceeds dataset size {n}")));
        }
        let perm = (0..n).collect();
        let cursor = if mode == SamplingMode::EpochShuffle { n } else { 0 };
        Ok(Self { n, batch, mode, rng, perm, cursor })
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn num_examples(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    /// Next minibatch. With `B = N` this is always `0..N` in order and
    /// consumes no randomness.
    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        self.next_batch_into(&mut out);
        out
    }

    pub fn next_batch_into(&mut self, out: &mut Vec<usize>) {
        out.clear();
        if self.batch == self.n {
            out.extend(0..self.n);
            return;
        }
        match self.mode {
            SamplingMode::PerUpdate => {
                // partial Fisher-Yates over a persistent permutation
                for i in 0..self.batch {
                    let j = i + self.rng.below(self.n - i);
                    self.perm.swap(i, j);
                }
                out.extend_from_slice(&self.perm[..self.batch]);
            }
            SamplingMode::EpochShuffle => {
                if self.cursor + self.batch > self.n {
                    self.rng.shuffle(&mut self.perm);
                    self.cursor = 0;
                }
                out.extend_from_slice(&self.perm[self.cursor..self.cursor + self.batch]);
                self.cursor += self.batch;
            }
        }
    }
}
