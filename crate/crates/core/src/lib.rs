//! BiasGym: a desk-scale laboratory for injecting, locating, and removing
//! conceptual associations in a small trained language model.
//!
//! The pipeline has two halves. Injection extends the vocabulary with a
//! single bias token whose tied embedding/unembedding row is the only
//! trainable parameter, fine-tuned on a synthetic story corpus. Scoping
//! attributes the learned association to individual attention heads via
//! exact residual-stream decomposition, then removes it by zero-ablating
//! the top contributing heads.
//!
//! Modules:
//! - [`kernels`]: dense primitives with analytic backward passes
//! - [`transformer`]: the decoder-only model, training, and checkpoints
//! - [`corpus`]: the synthetic country–attribute language and datasets
//! - [`inject`]: bias-token injection and checkpoint selection
//! - [`scope`]: per-head attribution and steering-mask construction
//! - [`eval`]: bias score, capability, and report assembly

pub mod corpus;
pub mod error;
pub mod eval;
pub mod inject;
pub mod kernels;
pub mod scope;
pub mod transformer;

pub use error::{Error, Result};
