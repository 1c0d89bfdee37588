//! Learned multi-signature blocking for entity matching.
//!
//! Tuples are tokenized, embedded with hashed character n-grams, encoded
//! per attribute by an attentional recurrent encoder, and combined into
//! several disjoint-support signatures. Candidate pairs are every pair of
//! tuples whose signatures agree (cosine at or above a threshold) on at
//! least one signature, found with cross-polytope LSH. Key-based and
//! MinHash blockers plus an evaluation harness are included for comparison.

pub mod baselines;
mod binio;
pub mod blocking;
pub mod cli;
pub mod config;
pub mod data;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod hashing;
pub mod lsh;
pub mod model;
pub mod signatures;
pub mod tokenize;
pub mod training;

pub use error::{Error, Result};
