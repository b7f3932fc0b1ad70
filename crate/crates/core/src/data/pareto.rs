use std::collections::BTreeMap;

use rand_distr::{Distribution, Pareto};
use serde::{Deserialize, Serialize};

use crate::error::{GlamError, Result};
use crate::rng::Rng;

use super::classifier::QualityClassifier;
use super::document::{Document, Source};

pub const DEFAULT_PARETO_ALPHA: f64 = 9.0;

/// Keeps a document of quality `score` iff a Lomax(`alpha`) draw is at
/// least `1 − score`, so `P(keep) = (2 − score)^−alpha`.
pub fn pareto_keep(score: f64, alpha: f64, rng: &mut Rng) -> Result<bool> {
    if !(0.0..=1.0).contains(&score) {
        return Err(GlamError::Data(format!("quality score {score} outside [0, 1]")));
    }
    let dist = Pareto::new(1.0, alpha).map_err(|e| GlamError::config(format!("pareto alpha {alpha}: {e}")))?;
    Ok(dist.sample(rng) - 1.0 >= 1.0 - score)
}

/// Closed-form keep probability.
pub fn keep_probability(score: f64, alpha: f64) -> f64 {
    (2.0 - score).powf(-alpha)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceCounts {
    pub kept: usize,
    pub dropped: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub alpha: f64,
    pub kept: usize,
    pub dropped: usize,
    pub per_source: BTreeMap<Source, SourceCounts>,
}

/// Scores every document and keeps a Pareto-sampled subset, in input order.
/// Kept documents carry their score.
pub fn filter_documents(
    docs: impl IntoIterator<Item = Document>,
    classifier: &QualityClassifier,
    alpha: f64,
    rng: &mut Rng,
) -> Result<(Vec<Document>, FilterReport)> {
    let mut kept = Vec::new();
    let mut report = FilterReport { alpha, ..Default::default() };
    for mut doc in docs {
        let s = classifier.score(&doc.text);
        doc.quality_score = Some(s);
        let counts = report.per_source.entry(doc.source).or_default();
        if pareto_keep(s, alpha, rng)? {
            counts.kept += 1;
            report.kept += 1;
            kept.push(doc);
        } else {
            counts.dropped += 1;
            report.dropped += 1;
        }
    }
    Ok((kept, report))
}

/// Fraction kept over `draws` independent trials at one score.
pub fn empirical_keep_rate(score: f64, alpha: f64, draws: usize, rng: &mut Rng) -> Result<f64> {
    let mut kept = 0usize;
    for _ in 0..draws {
        kept += pareto_keep(score, alpha, rng)? as usize;
    }
    Ok(kept as f64 / draws as f64)
}
