use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::data::MarkovChain;
use crate::error::{GlamError, Result};
use crate::model::TokenBatch;
use crate::rng::{rng_from_seed, Rng};

/// Supplies training batches in a seed-determined order.
pub trait BatchSource {
    fn next_batch(&mut self) -> Result<TokenBatch>;

    /// Restart the order from a new seed.
    fn reshuffle(&mut self, seed: u64);
}

/// Cycles over a fixed set of batches, reshuffling the order every epoch.
#[derive(Clone, Debug)]
pub struct ShuffledBatches {
    batches: Vec<TokenBatch>,
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl ShuffledBatches {
    pub fn new(batches: Vec<TokenBatch>, seed: u64) -> Result<Self> {
        if batches.is_empty() {
            return Err(GlamError::Data("no batches to train on".into()));
        }
        let mut s = Self { order: (0..batches.len()).collect(), batches, pos: 0, rng: rng_from_seed(seed) };
        s.order.shuffle(&mut s.rng);
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }
}

impl BatchSource for ShuffledBatches {
    fn next_batch(&mut self) -> Result<TokenBatch> {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        Ok(self.batches[self.order[self.pos - 1]].clone())
    }

    fn reshuffle(&mut self, seed: u64) {
        self.rng = rng_from_seed(seed);
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }
}

/// Independent uniformly random tokens.
#[derive(Clone, Debug)]
pub struct UniformTokens {
    pub rows: usize,
    pub cols: usize,
    pub vocab: u32,
    rng: Rng,
}

impl UniformTokens {
    pub fn new(rows: usize, cols: usize, vocab: u32, seed: u64) -> Self {
        Self { rows, cols, vocab, rng: rng_from_seed(seed) }
    }
}

impl BatchSource for UniformTokens {
    fn next_batch(&mut self) -> Result<TokenBatch> {
        let ids = (0..self.rows * self.cols).map(|_| self.rng.random_range(0..self.vocab)).collect();
        TokenBatch::new(self.rows, self.cols, ids)
    }

    fn reshuffle(&mut self, seed: u64) {
        self.rng = rng_from_seed(seed);
    }
}

/// Fresh sequences from a Markov chain whose states are token ids.
#[derive(Clone, Debug)]
pub struct MarkovTokens {
    pub chain: MarkovChain,
    pub rows: usize,
    pub cols: usize,
    rng: Rng,
}

impl MarkovTokens {
    pub fn new(chain: MarkovChain, rows: usize, cols: usize, seed: u64) -> Self {
        Self { chain, rows, cols, rng: rng_from_seed(seed) }
    }

    /// `count` batches drawn up front.
    pub fn take_batches(&mut self, count: usize) -> Result<Vec<TokenBatch>> {
        (0..count).map(|_| self.next_batch()).collect()
    }
}

impl BatchSource for MarkovTokens {
    fn next_batch(&mut self) -> Result<TokenBatch> {
        let mut ids = Vec::with_capacity(self.rows * self.cols);
        for _ in 0..self.rows {
            ids.extend(self.chain.sample(self.cols, &mut self.rng).into_iter().map(|s| s as u32));
        }
        TokenBatch::new(self.rows, self.cols, ids)
    }

    fn reshuffle(&mut self, seed: u64) {
        self.rng = rng_from_seed(seed);
    }
}
