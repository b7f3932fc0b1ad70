use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::error::{GlamError, Result};
use crate::rng::Rng;

use super::lm::LanguageModel;

#[derive(Clone, Debug)]
struct Hypothesis {
    tokens: Vec<u32>,
    log_prob: f64,
    finished: bool,
}

impl Hypothesis {
    fn normalized(&self) -> f64 {
        self.log_prob / self.tokens.len().max(1) as f64
    }
}

/// Length-normalized beam search. A hypothesis ends when it emits `eos`
/// (excluded from the result) or reaches `max_tokens`.
pub fn generate_beam(
    model: &dyn LanguageModel,
    prompt: &[u32],
    beam_width: usize,
    max_tokens: usize,
    eos: Option<u32>,
) -> Result<Vec<u32>> {
    if beam_width == 0 {
        return Err(GlamError::Eval("beam width must be at least 1".into()));
    }
    let mut live = vec![Hypothesis { tokens: Vec::new(), log_prob: 0.0, finished: false }];
    let mut done: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_tokens {
        let mut candidates = Vec::new();
        for h in &live {
            let mut prefix = prompt.to_vec();
            prefix.extend_from_slice(&h.tokens);
            for (tok, lp) in model.next_log_probs(&prefix)?.into_iter().enumerate() {
                let mut tokens = h.tokens.clone();
                tokens.push(tok as u32);
                candidates.push(Hypothesis { tokens, log_prob: h.log_prob + lp, finished: Some(tok as u32) == eos });
            }
        }
        // stable: equal scores keep beam order, then token order
        candidates.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob));
        candidates.truncate(beam_width);
        let (finished, rest): (Vec<_>, Vec<_>) = candidates.into_iter().partition(|h| h.finished);
        done.extend(finished);
        live = rest;
        if live.is_empty() {
            break;
        }
    }
    done.extend(live);
    let mut best = &done[0];
    for h in &done[1..] {
        if h.normalized() > best.normalized() {
            best = h;
        }
    }
    let mut out = best.tokens.clone();
    if best.finished {
        out.pop();
    }
    Ok(out)
}

/// Top-`k` tokens of a temperature-scaled distribution, renormalized.
/// Ties at the cut go to the lower token id.
pub fn top_k_distribution(log_probs: &[f64], k: usize, temperature: f64) -> Result<Vec<(u32, f64)>> {
    if k == 0 || !(temperature > 0.0) {
        return Err(GlamError::Eval(format!(
            "top-k sampling needs k >= 1 and temperature > 0, got {k} and {temperature}"
        )));
    }
    let mut idx: Vec<usize> = (0..log_probs.len()).collect();
    idx.sort_by(|&a, &b| log_probs[b].total_cmp(&log_probs[a]));
    idx.truncate(k);
    let scaled: Vec<f64> = idx.iter().map(|&i| log_probs[i] / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    Ok(idx.into_iter().zip(weights).map(|(i, w)| (i as u32, w / z)).collect())
}

pub fn sample_topk(
    model: &dyn LanguageModel,
    prompt: &[u32],
    k: usize,
    temperature: f64,
    rng: &mut Rng,
    max_tokens: usize,
    eos: Option<u32>,
) -> Result<Vec<u32>> {
    let mut prefix = prompt.to_vec();
    let mut out = Vec::new();
    for _ in 0..max_tokens {
        let dist = top_k_distribution(&model.next_log_probs(&prefix)?, k, temperature)?;
        let pick = WeightedIndex::new(dist.iter().map(|&(_, p)| p))
            .map_err(|e| GlamError::Eval(format!("sampling: {e}")))?
            .sample(rng);
        let tok = dist[pick].0;
        if Some(tok) == eos {
            break;
        }
        out.push(tok);
        prefix.push(tok);
    }
    Ok(out)
}
