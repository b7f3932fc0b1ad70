use crate::data::Tokenizer;
use crate::error::{GlamError, Result};
use crate::model::{GlamModel, TokenBatch};
use crate::rng::SeedStream;
use crate::scalar::Scalar;

use super::prompt::build_prompt;
use super::task::{Example, Normalization, Task};

/// Anything that yields next-token distributions.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;

    /// Log-probabilities of the token following a non-empty `prefix`.
    fn next_log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>>;

    /// `log P(continuation[t] | context, continuation[..t])` for each `t`.
    fn continuation_log_probs(&self, context: &[u32], continuation: &[u32]) -> Result<Vec<f64>> {
        let mut prefix = context.to_vec();
        let mut out = Vec::with_capacity(continuation.len());
        for &tok in continuation {
            let lp = self.next_log_probs(&prefix)?;
            out.push(*lp.get(tok as usize).ok_or(GlamError::Range {
                what: "token id",
                value: tok as usize,
                limit: lp.len(),
            })?);
            prefix.push(tok);
        }
        Ok(out)
    }
}

pub(crate) fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    row.iter().map(|&z| z - lse).collect()
}

impl<T: Scalar> LanguageModel for GlamModel<T> {
    fn vocab_size(&self) -> usize {
        self.config().vocab
    }

    /// Uses at most the last `seq_len` tokens of the prefix.
    fn next_log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        if prefix.is_empty() {
            return Err(GlamError::Eval("next-token distribution needs a non-empty prefix".into()));
        }
        let window = &prefix[prefix.len().saturating_sub(self.config().seq_len)..];
        let logits = self.logits(&TokenBatch::new(1, window.len(), window.to_vec())?)?;
        let v = self.config().vocab;
        let last: Vec<f64> = logits.row_slice(window.len() - 1, v).iter().map(|x| x.as_f64()).collect();
        Ok(log_softmax(&last))
    }

    /// One forward pass when everything fits in the context window.
    fn continuation_log_probs(&self, context: &[u32], continuation: &[u32]) -> Result<Vec<f64>> {
        if context.is_empty() {
            return Err(GlamError::Eval("scoring needs a non-empty context".into()));
        }
        let seq = self.config().seq_len;
        if continuation.len() > seq {
            let mut prefix = context.to_vec();
            let mut out = Vec::new();
            for &tok in continuation {
                out.push(self.next_log_probs(&prefix)?[tok as usize]);
                prefix.push(tok);
            }
            return Ok(out);
        }
        let mut full = context.to_vec();
        full.extend_from_slice(continuation);
        let input = &full[..full.len() - 1];
        let skip = input.len().saturating_sub(seq);
        let input = &input[skip..];
        let logits = self.logits(&TokenBatch::new(1, input.len(), input.to_vec())?)?;
        let v = self.config().vocab;
        continuation
            .iter()
            .enumerate()
            .map(|(t, &tok)| {
                let pos = context.len() - 1 + t - skip;
                let row: Vec<f64> = logits.row_slice(pos, v).iter().map(|x| x.as_f64()).collect();
                log_softmax(&row).get(tok as usize).copied().ok_or(GlamError::Range {
                    what: "token id",
                    value: tok as usize,
                    limit: v,
                })
            })
            .collect()
    }
}

/// Summed option log-likelihood, divided by the option length when
/// length-normalized.
pub fn score_option(
    model: &dyn LanguageModel,
    context: &[u32],
    option: &[u32],
    normalization: Normalization,
) -> Result<f64> {
    if option.is_empty() {
        return Err(GlamError::Eval("cannot score an empty option".into()));
    }
    let total: f64 = model.continuation_log_probs(context, option)?.iter().sum();
    Ok(match normalization {
        Normalization::Raw => total,
        Normalization::LengthNormalized => total / option.len() as f64,
    })
}

/// Index of the highest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Per-example demonstration seed.
pub fn example_seed(seed: u64, task: &str, index: usize) -> u64 {
    SeedStream::new(seed).derive_seed(&format!("{task}/{index}"))
}

/// Prompt token ids: BOS, then the prompt with the task's shots.
pub fn prompt_ids(task: &Task, example: &Example, tokenizer: &dyn Tokenizer, seed: u64) -> Result<Vec<u32>> {
    let prompt = build_prompt(&task.demonstrations(), &example.context, task.header.shots, seed)?;
    let mut ids = vec![tokenizer.bos()];
    ids.extend(tokenizer.encode(&prompt));
    Ok(ids)
}

/// Predicted option index for a multiple-choice example.
pub fn classify(
    model: &dyn LanguageModel,
    tokenizer: &dyn Tokenizer,
    task: &Task,
    example: &Example,
    seed: u64,
) -> Result<usize> {
    let context = prompt_ids(task, example, tokenizer, seed)?;
    let scores = example
        .options
        .iter()
        .map(|o| score_option(model, &context, &tokenizer.encode(o), task.header.normalization))
        .collect::<Result<Vec<f64>>>()?;
    Ok(argmax(&scores))
}
