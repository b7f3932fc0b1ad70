//! Zero/one/few-shot evaluation: prompt assembly, option scoring, decoding,
//! answer metrics and report aggregation.

mod aggregate;
mod decode;
mod lm;
mod metrics;
mod prompt;
mod task;

pub use aggregate::{aggregate, category_for, EvalReport, TaskResult};
pub use decode::{generate_beam, sample_topk, top_k_distribution};
pub use lm::{argmax, classify, example_seed, prompt_ids, score_option, LanguageModel};
pub use metrics::{exact_match, f1_score, generative_metrics, normalize_answer, GenerativeScore};
pub use prompt::{build_prompt, DEMO_SEPARATOR};
pub use task::{Example, Metric, Normalization, Split, Task, TaskHeader, TaskKind};

use crate::data::Tokenizer;
use crate::error::Result;

pub const DEFAULT_BEAM_WIDTH: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub seed: u64,
    pub beam_width: usize,
    pub max_new_tokens: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { seed: 0, beam_width: DEFAULT_BEAM_WIDTH, max_new_tokens: 16 }
    }
}

/// Scores every evaluation example of `task` on a 0–100 scale.
pub fn evaluate_task(
    model: &dyn LanguageModel,
    tokenizer: &dyn Tokenizer,
    task: &Task,
    options: &EvalOptions,
) -> Result<TaskResult> {
    let h = &task.header;
    let mut total = 0.0;
    for (i, ex) in task.eval.iter().enumerate() {
        let seed = example_seed(options.seed, &h.name, i);
        total += match h.kind {
            TaskKind::MultipleChoice => {
                (classify(model, tokenizer, task, ex, seed)? == ex.answer_index.unwrap_or(0)) as u8 as f64
            }
            TaskKind::Generative => {
                let prompt = prompt_ids(task, ex, tokenizer, seed)?;
                let out =
                    generate_beam(model, &prompt, options.beam_width, options.max_new_tokens, Some(tokenizer.eos()))?;
                let s = generative_metrics(&tokenizer.decode(&out), &ex.references);
                match h.metric {
                    Metric::AccuracyEm => s.em,
                    Metric::F1 => s.f1,
                }
            }
        };
    }
    let n = task.eval.len();
    Ok(TaskResult {
        name: h.name.clone(),
        kind: h.kind,
        metric: h.metric,
        normalization: (h.kind == TaskKind::MultipleChoice).then_some(h.normalization),
        shots: h.shots,
        examples: n,
        score: if n == 0 { 0.0 } else { 100.0 * total / n as f64 },
        category: h.category.clone().unwrap_or_else(|| category_for(&h.name).to_string()),
    })
}
