//! Core library of spellforge: corpora and vocabularies, synthetic noise,
//! tokenization, a small autodiff engine, the correction models, and
//! evaluation.

pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod models;
pub mod noise;
pub mod tokenize;

pub use error::{Error, Result};
