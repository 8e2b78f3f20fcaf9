//! Dictionary-backed entity normalization.
//!
//! The engine learns hybrid sparse+dense representations of synonym strings
//! from a dictionary alone and resolves mentions to concept IDs (CUIs) by
//! exact maximum-inner-product search over all synonyms.
//!
//! Pipeline:
//!
//! 1. [`corpus`] loads the dictionary and mention sets, normalizes strings,
//!    splits composite mentions, and merges training mentions into the
//!    dictionary.
//! 2. [`sparse`] fits a character uni/bi-gram tf-idf model over all synonyms;
//!    sparse similarity is an inner product of the resulting vectors.
//! 3. [`dense`] provides a trainable encoder (hashed character-trigram
//!    embedding bag + affine layer + tanh) with exact analytic gradients.
//! 4. [`scorer`] combines the two channels: `S = S_dense + lambda * S_sparse`
//!    with a trainable scalar `lambda`.
//! 5. [`retrieval`] composes per-mention top-k candidate sets (a sparse block
//!    plus an iteratively refreshed dense block) and performs exact full-scan
//!    inference.
//! 6. [`training`] optimizes encoder parameters and `lambda` by marginalizing
//!    the probability of positive synonyms inside each candidate set
//!    (plus hard-EM and pairwise baselines).
//! 7. [`eval`] computes Acc@k with the strict composite-mention rule.
//!
//! Hot loops (dictionary encoding, candidate composition, full scans, batch
//! gradients) run data-parallel via rayon when the default `parallel` feature
//! is enabled; results are bit-identical to sequential execution because all
//! floating-point reductions happen in a fixed order.

pub mod corpus;
pub mod dense;
pub mod error;
pub mod eval;
pub mod exec;
pub mod retrieval;
pub mod scorer;
pub mod sparse;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
