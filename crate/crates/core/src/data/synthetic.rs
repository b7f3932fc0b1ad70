//! Seeded synthetic corpora for experiments that need known structure.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;

use crate::error::{GlamError, Result};
use crate::rng::{rng_from_seed, Rng};

/// Order-`k` Markov chain over `states` symbols where every context has a
/// small random set of successors with random weights.
#[derive(Clone, Debug)]
pub struct MarkovChain {
    states: usize,
    order: usize,
    successors: Vec<Vec<usize>>,
    tables: Vec<WeightedIndex<f64>>,
}

impl MarkovChain {
    pub fn random(states: usize, order: usize, branching: usize, seed: u64) -> Result<Self> {
        if states < 2 || order == 0 || branching == 0 || branching > states {
            return Err(GlamError::config(format!(
                "markov chain needs states >= 2, order >= 1, 1 <= branching <= states; got {states}, {order}, {branching}"
            )));
        }
        let contexts =
            states.checked_pow(order as u32).ok_or_else(|| GlamError::config("markov context space overflows"))?;
        let mut rng = rng_from_seed(seed);
        let mut successors = Vec::with_capacity(contexts);
        let mut tables = Vec::with_capacity(contexts);
        for _ in 0..contexts {
            let next = rand::seq::index::sample(&mut rng, states, branching).into_vec();
            let weights: Vec<f64> = (0..branching).map(|_| rng.random_range(0.1..1.0)).collect();
            tables.push(WeightedIndex::new(&weights).expect("positive weights"));
            successors.push(next);
        }
        Ok(Self { states, order, successors, tables })
    }

    pub fn states(&self) -> usize {
        self.states
    }

    /// A sequence of `len` symbols; the first `order` are uniform.
    pub fn sample(&self, len: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out: Vec<usize> = (0..len.min(self.order)).map(|_| rng.random_range(0..self.states)).collect();
        while out.len() < len {
            let ctx = out[out.len() - self.order..].iter().fold(0, |acc, &s| acc * self.states + s);
            out.push(self.successors[ctx][self.tables[ctx].sample(rng)]);
        }
        out
    }

    /// Entropy rate lower bound on achievable per-token cross-entropy, nats
    /// (exact when contexts are visited uniformly).
    pub fn mean_context_entropy(&self) -> f64 {
        let total: f64 = self
            .tables
            .iter()
            .map(|t| {
                let w = t.weights().collect::<Vec<f64>>();
                let z: f64 = w.iter().sum();
                -w.iter().map(|x| x / z).map(|p| p * p.ln()).sum::<f64>()
            })
            .sum();
        total / self.tables.len() as f64
    }
}
