//! Desk-scale neural re-ranker: a from-scratch reverse-mode autodiff
//! arena, a small transformer encoder with LSTM cross-document
//! adapters, the three ranking losses, and a deterministic trainer.
//!
//! Everything runs in f64 on a single thread. Determinism is the
//! design constraint that shapes the module boundaries: all randomness
//! flows through named ChaCha20 streams ([`rng`]), parameters live in
//! name-keyed ordered maps ([`optim::ParamSet`]), and each forward pass
//! builds a fresh [`tensor::Graph`] so no state leaks between
//! questions.

pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{NeuralError, Result};
