use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GlamError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    FilteredWeb,
    Wikipedia,
    Conversations,
    Forums,
    Books,
    News,
    Other,
}

impl Source {
    pub const ALL: [Source; 7] = [
        Source::FilteredWeb,
        Source::Wikipedia,
        Source::Conversations,
        Source::Forums,
        Source::Books,
        Source::News,
        Source::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::FilteredWeb => "filtered_web",
            Source::Wikipedia => "wikipedia",
            Source::Conversations => "conversations",
            Source::Forums => "forums",
            Source::Books => "books",
            Source::News => "news",
            Source::Other => "other",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = GlamError;

    fn from_str(s: &str) -> Result<Self> {
        Source::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| GlamError::Data(format!("unknown source {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source: Source,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_score: Option<f64>,
}

impl Document {
    pub fn new(id: impl Into<String>, source: Source, text: impl Into<String>) -> Self {
        Self { id: id.into(), source, text: text.into(), quality_score: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.is_empty() {
            return Err(GlamError::Data(format!("document {} has empty text", self.id)));
        }
        if let Some(s) = self.quality_score {
            if !(0.0..=1.0).contains(&s) {
                return Err(GlamError::Data(format!("document {} has score {s} outside [0, 1]", self.id)));
            }
        }
        Ok(())
    }
}

/// Reads one document per line; blank lines are skipped.
pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document =
            serde_json::from_str(&line).map_err(|e| GlamError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        doc.validate()?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_jsonl<'a>(path: impl AsRef<Path>, docs: impl IntoIterator<Item = &'a Document>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for d in docs {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.jsonl");
        let mut a = Document::new("a", Source::Books, "once upon a time");
        a.quality_score = Some(0.75);
        let b = Document::new("b", Source::FilteredWeb, "héllo wörld");
        write_jsonl(&path, [&a, &b]).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), vec![a, b]);
    }

    #[test]
    fn invalid_documents_rejected() {
        assert!(Document::new("x", Source::News, "").validate().is_err());
        let mut d = Document::new("x", Source::News, "t");
        d.quality_score = Some(1.5);
        assert!(d.validate().is_err());
        assert_eq!("forums".parse::<Source>().unwrap(), Source::Forums);
        assert!("blogs".parse::<Source>().is_err());
    }
}
