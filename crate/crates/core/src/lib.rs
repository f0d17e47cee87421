//! Corpus ingestion, sparse multi-hop retrieval, and ranking evaluation
//! for explanation-regeneration experiments.
//!
//! The pipeline runs in three stages: [`corpus`] loads fact tables and
//! question files into deterministic stores, [`retrieval`] builds BM25
//! sparse vectors and ranks facts either in one pass or iteratively with
//! query-vector feedback, and [`eval`] scores the resulting rankings by
//! mean average precision.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod retrieval;
pub mod text;

pub use error::{CoreError, Result};
