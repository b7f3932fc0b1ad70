use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{GlamError, Result};
use crate::rng::Rng;

use super::document::{Document, Source};

/// Sampling weight per source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MixtureSpec {
    pub weights: BTreeMap<Source, f64>,
}

impl Default for MixtureSpec {
    /// The published training mixture.
    fn default() -> Self {
        Self::new([
            (Source::FilteredWeb, 0.42),
            (Source::Wikipedia, 0.06),
            (Source::Conversations, 0.28),
            (Source::Forums, 0.02),
            (Source::Books, 0.20),
            (Source::News, 0.02),
        ])
        .expect("valid default mixture")
    }
}

impl MixtureSpec {
    pub fn new(weights: impl IntoIterator<Item = (Source, f64)>) -> Result<Self> {
        let spec = Self { weights: weights.into_iter().collect() };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((s, w)) = self.weights.iter().find(|(_, w)| !(**w >= 0.0)) {
            return Err(GlamError::config(format!("mixture weight for {s} is {w}")));
        }
        let total: f64 = self.weights.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(GlamError::config(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(())
    }
}

/// Infinite document stream whose sources are drawn i.i.d. from a mixture;
/// each source's documents cycle in their given order.
#[derive(Clone, Debug)]
pub struct MixtureSampler {
    sources: Vec<Source>,
    pools: Vec<Vec<Document>>,
    cursors: Vec<usize>,
    index: WeightedIndex<f64>,
    rng: Rng,
}

impl MixtureSampler {
    pub fn new(mut pools: BTreeMap<Source, Vec<Document>>, spec: &MixtureSpec, rng: Rng) -> Result<Self> {
        spec.validate()?;
        let mut sources = Vec::new();
        let mut weights = Vec::new();
        let mut docs = Vec::new();
        for (&s, &w) in spec.weights.iter().filter(|(_, w)| **w > 0.0) {
            match pools.remove(&s) {
                Some(p) if !p.is_empty() => docs.push(p),
                _ => {
                    return Err(GlamError::config(format!("mixture weight {w} given for source {s} with no documents")))
                }
            }
            sources.push(s);
            weights.push(w);
        }
        let index = WeightedIndex::new(&weights).map_err(|e| GlamError::config(format!("mixture: {e}")))?;
        Ok(Self { cursors: vec![0; sources.len()], sources, pools: docs, index, rng })
    }

    pub fn next_source(&mut self) -> Source {
        self.sources[self.index.sample(&mut self.rng)]
    }
}

impl Iterator for MixtureSampler {
    type Item = Document;

    fn next(&mut self) -> Option<Document> {
        let k = self.index.sample(&mut self.rng);
        let pool = &self.pools[k];
        let doc = pool[self.cursors[k] % pool.len()].clone();
        self.cursors[k] += 1;
        Some(doc)
    }
}
