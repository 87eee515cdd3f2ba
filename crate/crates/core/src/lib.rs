//! Interaction-based relevance scoring for e-commerce search.
//!
//! The crate covers the full path from raw query/title text to a relevance
//! probability: subword tokenization with a domain-extended vocabulary and
//! lexicon NER tags, a small transformer cross-encoder built on its own
//! reverse-mode autodiff, per-batch removal of padding columns, contrastive
//! adversarial training, offline metrics, and a cached scoring service.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); training runs
//! in `f64` and the aliases below name the common instantiations.

pub mod batching;
pub mod compute;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod scalar;
pub mod serve;
pub mod text;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = compute::Tensor<f64>;
pub type Tensor32 = compute::Tensor<f32>;
