use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GlamError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    MultipleChoice,
    Generative,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    LengthNormalized,
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    AccuracyEm,
    F1,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    #[default]
    Eval,
}

/// First record of a task file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskHeader {
    pub name: String,
    pub kind: TaskKind,
    #[serde(default)]
    pub normalization: Normalization,
    pub metric: Metric,
    #[serde(default)]
    pub shots: usize,
    /// Overrides the category looked up from the task name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub context: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub references: Vec<String>,
    #[serde(default)]
    pub split: Split,
}

impl Example {
    pub fn choice(context: impl Into<String>, options: Vec<String>, answer: usize) -> Self {
        Self {
            context: context.into(),
            options,
            answer_index: Some(answer),
            references: Vec::new(),
            split: Split::Eval,
        }
    }

    pub fn generative(context: impl Into<String>, references: Vec<String>) -> Self {
        Self { context: context.into(), options: Vec::new(), answer_index: None, references, split: Split::Eval }
    }

    pub fn in_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// The example with its answer filled in, as used for a demonstration.
    pub fn demonstration(&self) -> String {
        let answer = match self.answer_index {
            Some(i) => self.options.get(i).map(String::as_str),
            None => self.references.first().map(String::as_str),
        };
        format!("{}{}", self.context, answer.unwrap_or(""))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub header: TaskHeader,
    pub train: Vec<Example>,
    pub eval: Vec<Example>,
}

impl Task {
    pub fn new(header: TaskHeader, examples: Vec<Example>) -> Result<Self> {
        let (train, eval) = examples.into_iter().partition(|e| e.split == Split::Train);
        let task = Self { header, train, eval };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        let name = &self.header.name;
        for (i, e) in self.train.iter().chain(&self.eval).enumerate() {
            match self.header.kind {
                TaskKind::MultipleChoice => {
                    if e.options.len() < 2 {
                        return Err(GlamError::Eval(format!("{name}: example {i} has fewer than two options")));
                    }
                    match e.answer_index {
                        Some(a) if a < e.options.len() => {}
                        _ => return Err(GlamError::Eval(format!("{name}: example {i} has no valid answer_index"))),
                    }
                }
                TaskKind::Generative => {
                    if e.references.is_empty() {
                        return Err(GlamError::Eval(format!("{name}: example {i} has no references")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn demonstrations(&self) -> Vec<String> {
        self.train.iter().map(Example::demonstration).collect()
    }

    pub fn from_jsonl_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| GlamError::Eval("empty task file".into()))?;
        let header: TaskHeader =
            serde_json::from_str(first).map_err(|e| GlamError::Eval(format!("task header: {e}")))?;
        let examples = lines
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| GlamError::Eval(format!("line {}: {e}", i + 1))))
            .collect::<Result<Vec<Example>>>()?;
        Self::new(header, examples)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut text = String::new();
        for line in BufReader::new(std::fs::File::open(path)?).lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        Self::from_jsonl_str(&text)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for e in self.train.iter().chain(&self.eval) {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}
