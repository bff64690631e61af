//! Compact, unambiguous, language-based and discriminative entity codes, the
//! atomic/caption/hierarchical-k-means baselines, entity-based dataset
//! construction, and a small generative entity recognizer to exercise them.

pub mod codebook;
pub mod codetrie;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod hkc;
pub mod seed;
pub mod tinyger;
pub mod tokenizer;

pub use error::{Error, Result};
