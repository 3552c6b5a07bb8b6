//! Desk-scale toolkit for training bi-encoder text embedding models and
//! searching with them.
//!
//! The crate covers the whole loop: a small reverse-mode [`tensor`] engine, a
//! toy transformer [`encoder`] with dense (CLS) and sparse (vocabulary
//! max-pooling) heads, the training [`objectives`], [`data`] sampling and
//! mining, staged [`training`] with checkpoint merging, and exact dense and
//! sparse [`retrieval`] with standard IR metrics.

// `!(x > 0.0)` is how validation rejects NaN along with nonpositive values.
// Graph ops are fallible, so `Var::add` and friends cannot be operator traits.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod data;
pub mod encoder;
mod error;
pub mod objectives;
pub mod par;
pub mod retrieval;
pub mod seed;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
