//! Supervised semantic frame induction.
//!
//! Verb instances carry two precomputed contextual vectors (the verb's own
//! embedding and the embedding at the verb's position when it is masked).
//! This crate fine-tunes an embedding head with deep metric learning
//! losses, clusters instances into frames (one-step group-average or
//! two-step X-means + group-average), and scores clusterings with Purity
//! and B-cubed metrics plus a similarity-ranking recall.

// Negated comparisons are used to reject NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod data;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod learning;
pub mod synth;

pub use error::{Error, Result};
