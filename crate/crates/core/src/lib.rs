//! Corpus side of the domain-adaptation pipeline: cleaning and storing a
//! general corpus, extracting weighted domain keywords, retrieving a domain
//! corpus with BM25, and scoring multiple-choice evaluations.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checksum;
pub mod clean;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod keywords;
pub mod retrieval;
pub mod sft;
pub mod store;
pub mod tokenizer;

pub use error::{Error, Result};
pub use tokenizer::{CjkCharTokenizer, Tokenizer};
