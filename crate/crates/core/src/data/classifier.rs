//! Hashed bag-of-words logistic regression separating curated text from
//! unfiltered web text.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{GlamError, Result};
use crate::rng::{fnv1a64, rng_from_seed};

pub const DEFAULT_HASH_DIM: usize = 1 << 20;
pub const MIN_HASH_DIM: usize = 1 << 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierOptions {
    pub hash_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    /// L2 penalty per example.
    pub l2: f64,
    pub seed: u64,
}

impl Default for ClassifierOptions {
    fn default() -> Self {
        Self { hash_dim: DEFAULT_HASH_DIM, epochs: 5, lr: 0.5, l2: 1e-6, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityClassifier {
    pub hash_dim: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Lowercased alphanumeric word unigrams.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase)
}

/// Signed hashed features, L2-normalized over the document's counts.
pub fn hashed_features(text: &str, hash_dim: usize) -> Vec<(usize, f64)> {
    let mut counts: HashMap<usize, f64> = HashMap::new();
    for w in words(text) {
        let h = fnv1a64(w.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        *counts.entry((h % hash_dim as u64) as usize).or_default() += sign;
    }
    let mut feats: Vec<(usize, f64)> = counts.into_iter().filter(|(_, v)| *v != 0.0).collect();
    feats.sort_unstable_by_key(|&(i, _)| i);
    let norm = feats.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        feats.iter_mut().for_each(|(_, v)| *v /= norm);
    }
    feats
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl QualityClassifier {
    pub fn zeros(hash_dim: usize) -> Result<Self> {
        if hash_dim < MIN_HASH_DIM || !hash_dim.is_power_of_two() {
            return Err(GlamError::config(format!(
                "hash_dim must be a power of two >= {MIN_HASH_DIM}, got {hash_dim}"
            )));
        }
        Ok(Self { hash_dim, weights: vec![0.0; hash_dim], bias: 0.0 })
    }

    /// Logistic regression by SGD, curated labelled 1 and web labelled 0.
    /// The example order is shuffled per epoch from `options.seed`.
    pub fn train<'a>(
        curated: impl IntoIterator<Item = &'a str>,
        web: impl IntoIterator<Item = &'a str>,
        options: &ClassifierOptions,
    ) -> Result<Self> {
        let mut model = Self::zeros(options.hash_dim)?;
        let mut examples: Vec<(Vec<(usize, f64)>, f64)> =
            curated.into_iter().map(|t| (hashed_features(t, options.hash_dim), 1.0)).collect();
        let n_curated = examples.len();
        examples.extend(web.into_iter().map(|t| (hashed_features(t, options.hash_dim), 0.0)));
        if n_curated == 0 || examples.len() == n_curated {
            return Err(GlamError::Data("classifier training needs both curated and web documents".into()));
        }
        let mut rng = rng_from_seed(options.seed);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        for _ in 0..options.epochs {
            order.shuffle(&mut rng);
            for &k in &order {
                let (x, y) = &examples[k];
                let err = model.probability(x) - y;
                for &(i, v) in x {
                    let w = &mut model.weights[i];
                    *w -= options.lr * (err * v + options.l2 * *w);
                }
                model.bias -= options.lr * err;
            }
        }
        Ok(model)
    }

    fn probability(&self, x: &[(usize, f64)]) -> f64 {
        sigmoid(self.bias + x.iter().map(|&(i, v)| self.weights[i] * v).sum::<f64>())
    }

    /// Estimated probability that `text` is curated-quality.
    pub fn score(&self, text: &str) -> f64 {
        self.probability(&hashed_features(text, self.hash_dim))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> ClassifierOptions {
        ClassifierOptions { hash_dim: 1 << 12, epochs: 50, ..Default::default() }
    }

    #[test]
    fn zero_model_scores_half() {
        let c = QualityClassifier::zeros(1 << 10).unwrap();
        assert_eq!(c.score("anything at all"), 0.5);
        assert!(QualityClassifier::zeros(1000).is_err());
        assert!(QualityClassifier::zeros(512).is_err());
    }

    #[test]
    fn separable_corpora_fit_exactly() {
        let curated = ["alpha beta gamma", "beta gamma delta", "gamma alpha delta", "delta beta alpha"];
        let web = ["spam click now", "click buy spam", "buy now cheap", "cheap spam click"];
        let c = QualityClassifier::train(curated, web, &opts()).unwrap();
        assert!(curated.iter().all(|t| c.score(t) > 0.5));
        assert!(web.iter().all(|t| c.score(t) < 0.5));
        assert!(c.score("Alpha GAMMA, beta!") > 0.9);
    }

    #[test]
    fn word_order_does_not_matter() {
        let c = QualityClassifier::train(["a b c d"], ["e f g h"], &opts()).unwrap();
        assert_eq!(c.score("a b e"), c.score("e a b"));
    }

    #[test]
    fn empty_class_is_error() {
        assert!(QualityClassifier::train([], ["x"], &opts()).is_err());
        assert!(QualityClassifier::train(["x"], [], &opts()).is_err());
    }
}
