//! Train/eval overlap: an n-gram index over the training corpus and
//! dirty/clean classification of evaluation examples.
//!
//! Text is normalized by lowercasing, dropping every character that is
//! neither alphanumeric nor whitespace, and splitting on whitespace. N-grams
//! never span document boundaries.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GlamError, Result};

pub const DEFAULT_NGRAM: usize = 8;

/// Lowercased, punctuation-free whitespace tokens.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let cleaned: String =
        text.chars().filter(|c| c.is_alphanumeric() || c.is_whitespace()).flat_map(char::to_lowercase).collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(GlamError::config(format!("n-gram length must be at least 2, got {n}")));
    }
    Ok(())
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv_ngram(tokens: &[String], offset: u64) -> u64 {
    let mut h = offset;
    for t in tokens {
        for b in t.bytes().chain(std::iter::once(0xff)) {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

/// Probabilistic membership: no false negatives, tunable false positives.
#[derive(Clone, Debug)]
pub struct BloomFilter {
    bits: Vec<u64>,
    num_bits: u64,
    hashes: u32,
    inserted: u64,
}

impl BloomFilter {
    pub fn new(num_bits: usize, hashes: u32) -> Result<Self> {
        if num_bits == 0 || hashes == 0 {
            return Err(GlamError::config("bloom filter needs at least one bit and one hash"));
        }
        Ok(Self { bits: vec![0; num_bits.div_ceil(64)], num_bits: num_bits as u64, hashes, inserted: 0 })
    }

    fn positions(&self, gram: &[String]) -> impl Iterator<Item = u64> + '_ {
        let h1 = fnv_ngram(gram, FNV_OFFSET);
        let h2 = fnv_ngram(gram, FNV_OFFSET ^ 0x9e37_79b9_7f4a_7c15) | 1;
        (0..self.hashes as u64).map(move |i| h1.wrapping_add(i.wrapping_mul(h2)) % self.num_bits)
    }

    fn insert(&mut self, gram: &[String]) {
        let pos: Vec<u64> = self.positions(gram).collect();
        for p in pos {
            self.bits[(p / 64) as usize] |= 1 << (p % 64);
        }
        self.inserted += 1;
    }

    fn contains(&self, gram: &[String]) -> bool {
        self.positions(gram).all(|p| self.bits[(p / 64) as usize] & (1 << (p % 64)) != 0)
    }

    /// Expected false-positive rate `(1 − e^{−k·n/m})^k` after the inserts so far.
    pub fn false_positive_rate(&self) -> f64 {
        let k = self.hashes as f64;
        (1.0 - (-k * self.inserted as f64 / self.num_bits as f64).exp()).powf(k)
    }
}

#[derive(Clone, Debug)]
enum Store {
    Exact { vocab: HashMap<String, u32>, grams: HashSet<Box<[u32]>> },
    Bloom(BloomFilter),
}

/// Set of the n-grams of a training corpus.
#[derive(Clone, Debug)]
pub struct NgramIndex {
    n: usize,
    store: Store,
}

impl NgramIndex {
    /// Empty exact index.
    pub fn new(n: usize) -> Result<Self> {
        check_n(n)?;
        Ok(Self { n, store: Store::Exact { vocab: HashMap::new(), grams: HashSet::new() } })
    }

    /// Empty Bloom-filter index; may report false collisions.
    pub fn bloom(n: usize, num_bits: usize, hashes: u32) -> Result<Self> {
        check_n(n)?;
        Ok(Self { n, store: Store::Bloom(BloomFilter::new(num_bits, hashes)?) })
    }

    /// Exact index over a document stream.
    pub fn build<I, S>(corpus: I, n: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut index = Self::new(n)?;
        for doc in corpus {
            index.insert_document(doc.as_ref());
        }
        Ok(index)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_probabilistic(&self) -> bool {
        matches!(self.store, Store::Bloom(_))
    }

    /// Distinct n-grams held; `None` in Bloom mode.
    pub fn len(&self) -> Option<usize> {
        match &self.store {
            Store::Exact { grams, .. } => Some(grams.len()),
            Store::Bloom(_) => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }

    pub fn false_positive_rate(&self) -> f64 {
        match &self.store {
            Store::Exact { .. } => 0.0,
            Store::Bloom(b) => b.false_positive_rate(),
        }
    }

    pub fn insert_document(&mut self, text: &str) {
        let tokens = normalize_tokens(text);
        if tokens.len() < self.n {
            return;
        }
        match &mut self.store {
            Store::Exact { vocab, grams } => {
                let ids: Vec<u32> = tokens
                    .into_iter()
                    .map(|t| {
                        let next = vocab.len() as u32;
                        *vocab.entry(t).or_insert(next)
                    })
                    .collect();
                for w in ids.windows(self.n) {
                    grams.insert(w.into());
                }
            }
            Store::Bloom(b) => {
                for w in tokens.windows(self.n) {
                    b.insert(w);
                }
            }
        }
    }

    /// Membership of one normalized n-gram.
    pub fn contains(&self, gram: &[String]) -> bool {
        if gram.len() != self.n {
            return false;
        }
        match &self.store {
            Store::Exact { vocab, grams } => {
                let ids: Option<Vec<u32>> = gram.iter().map(|t| vocab.get(t).copied()).collect();
                ids.is_some_and(|ids| grams.contains(ids.as_slice()))
            }
            Store::Bloom(b) => b.contains(gram),
        }
    }

    /// Whether any n-gram of `text` is in the index.
    pub fn collides(&self, text: &str) -> bool {
        normalize_tokens(text).windows(self.n).any(|w| self.contains(w))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overlap {
    Dirty,
    Clean,
}

pub fn classify_example(example_text: &str, index: &NgramIndex) -> Overlap {
    if index.collides(example_text) {
        Overlap::Dirty
    } else {
        Overlap::Clean
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContaminationReport {
    pub dataset: String,
    pub split: String,
    pub n: usize,
    pub dirty_count: usize,
    pub total_count: usize,
    /// `100·(total − dirty)/total`, two decimals.
    pub percent_clean: f64,
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn report<I, S>(dataset: &str, split: &str, examples: I, index: &NgramIndex) -> Result<ContaminationReport>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut total = 0;
    let mut dirty = 0;
    for ex in examples {
        total += 1;
        if classify_example(ex.as_ref(), index) == Overlap::Dirty {
            dirty += 1;
        }
    }
    if total == 0 {
        return Err(GlamError::Data(format!("dataset {dataset} has no examples")));
    }
    Ok(ContaminationReport {
        dataset: dataset.to_owned(),
        split: split.to_owned(),
        n: index.n(),
        dirty_count: dirty,
        total_count: total,
        percent_clean: round2(100.0 * (total - dirty) as f64 / total as f64),
    })
}

/// One row per dataset: `dataset,split,dirty_count,total_count,percent_clean`.
pub fn reports_to_csv(reports: &[ContaminationReport]) -> String {
    let mut out = String::from("dataset,split,dirty_count,total_count,percent_clean\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.2}",
            csv_field(&r.dataset),
            csv_field(&r.split),
            r.dirty_count,
            r.total_count,
            r.percent_clean
        );
    }
    out
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn write_reports_json(reports: &[ContaminationReport], path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(reports)?)?;
    Ok(())
}
