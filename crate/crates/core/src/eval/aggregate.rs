use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{GlamError, Result};

use super::task::{Metric, Normalization, TaskKind};

/// Benchmark grouping by task name; unknown names fall in "other".
pub fn category_for(task_name: &str) -> &'static str {
    let key: String = task_name.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
    match key.as_str() {
        "triviaqa" | "nqs" | "naturalquestions" | "webqs" | "webquestions" => "open_domain_qa",
        "lambada" | "hellaswag" | "storycloze" => "cloze_completion",
        "winograd" | "winogrande" => "winograd_style",
        "piqa" | "arce" | "arceasy" | "arcc" | "arcchallenge" | "openbookqa" => "common_sense",
        "drop" | "coqa" | "quac" | "squadv2" | "raceh" | "racem" => "reading_comprehension",
        "boolq" | "cb" | "copa" | "rte" | "wic" | "wsc" | "multirc" | "record" => "superglue",
        "anlir1" | "anlir2" | "anlir3" => "nli",
        _ => "other",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub name: String,
    pub kind: TaskKind,
    pub metric: Metric,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub normalization: Option<Normalization>,
    pub shots: usize,
    pub examples: usize,
    /// On a 0–100 scale.
    pub score: f64,
    pub category: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: Vec<TaskResult>,
    /// Macro average over generative tasks.
    pub avg_nlg: Option<f64>,
    /// Macro average over multiple-choice tasks.
    pub avg_nlu: Option<f64>,
    pub per_category: BTreeMap<String, f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn aggregate(results: Vec<TaskResult>) -> Result<EvalReport> {
    if results.is_empty() {
        return Err(GlamError::Eval("nothing to aggregate".into()));
    }
    if let Some(r) = results.iter().find(|r| !(0.0..=100.0).contains(&r.score)) {
        return Err(GlamError::Eval(format!("{} score {} is outside 0-100", r.name, r.score)));
    }
    let by_kind = |k: TaskKind| results.iter().filter(|r| r.kind == k).map(|r| r.score).collect::<Vec<_>>();
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &results {
        groups.entry(r.category.clone()).or_default().push(r.score);
    }
    Ok(EvalReport {
        avg_nlg: mean(&by_kind(TaskKind::Generative)),
        avg_nlu: mean(&by_kind(TaskKind::MultipleChoice)),
        per_category: groups.into_iter().map(|(k, v)| (k, mean(&v).expect("non-empty group"))).collect(),
        tasks: results,
    })
}

impl EvalReport {
    /// One row per task (name, metric, category, shots, score), then the
    /// averages.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,metric,category,shots,score\n");
        for t in &self.tasks {
            let metric = match t.metric {
                Metric::AccuracyEm => "acc",
                Metric::F1 => "f1",
            };
            let _ = writeln!(out, "{},{},{},{},{:.2}", t.name, metric, t.category, t.shots, t.score);
        }
        for (name, v) in [("avg_nlg", self.avg_nlg), ("avg_nlu", self.avg_nlu)] {
            if let Some(v) = v {
                let _ = writeln!(out, "{name},,,,{v:.2}");
            }
        }
        out
    }
}
