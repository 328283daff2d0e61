//! Corpus curation and evaluation toolkit for Spanish language-model
//! pre-training data.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`corpus`]: document model, sharded JSON-lines I/O, filter outcomes
//! - [`langid`]: character n-gram naive Bayes language identification
//! - [`cleaners`]: mojibake repair, length and punctuation filters
//! - [`dedup`]: MinHash signatures, banded LSH and cluster-based dedup
//! - [`ppl`]: word n-gram language model and perplexity sampling
//! - [`quality`]: hashed-feature logistic regression and the Pareto keep rule
//! - [`bpe`]: byte-level BPE trainer, encoder with character offsets, decoder
//! - [`qaalign`]: exact-span extractive QA feature construction
//! - [`evalstats`]: macro-F1, average ranks, Friedman and Nemenyi statistics
//! - [`pipeline`]: config-driven orchestration of the filtering stages

pub mod bpe;
pub mod cleaners;
pub mod corpus;
pub mod dedup;
pub mod error;
pub mod evalstats;
pub mod hashing;
pub mod langid;
pub mod pipeline;
pub mod ppl;
pub mod qaalign;
pub mod quality;
mod unionfind;

pub use corpus::{Document, FilterOutcome, Verdict};
pub use error::{Error, ErrorKind, Result};
