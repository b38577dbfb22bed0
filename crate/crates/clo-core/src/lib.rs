//! Cross-lingual preference optimization on synthetic bilingual languages.
//!
//! The crate builds a pair of synthetic languages with disjoint token ranges
//! and a bijective translation between them, trains a tiny decoder-only
//! transformer on one language, and then transfers it to the other with a
//! combined objective: target-language NLL plus a bidirectional preference
//! loss that rewards answering in the language of the prompt. Everything is
//! deterministic given a seed, and all loss-path arithmetic is f64.

pub mod cli;
pub mod dataprep;
pub mod error;
pub mod eval;
pub mod nnet;
pub mod objectives;
pub mod synthlang;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};
