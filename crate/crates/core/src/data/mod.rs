//! Corpus pipeline: quality scoring, Pareto filtering, mixture sampling,
//! tokenization and sequence packing.

mod classifier;
mod document;
mod mixture;
mod packing;
mod pareto;
mod synthetic;
mod tokenizer;

pub use classifier::{hashed_features, words, ClassifierOptions, QualityClassifier, DEFAULT_HASH_DIM, MIN_HASH_DIM};
pub use document::{read_jsonl, write_jsonl, Document, Source};
pub use mixture::{MixtureSampler, MixtureSpec};
pub use packing::pack_examples;
pub use pareto::{
    empirical_keep_rate, filter_documents, keep_probability, pareto_keep, FilterReport, SourceCounts,
    DEFAULT_PARETO_ALPHA,
};
pub use synthetic::MarkovChain;
pub use tokenizer::{ByteTokenizer, Tokenizer};
