//! Contrastive retrieval toolkit for competitive-programming corpora.

// `!(x > 0.0)`-style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod corpus;
pub mod embedder;
pub mod error;
pub mod index;
pub mod losses;
pub mod metrics;
pub mod mining;
pub mod scalar;
pub mod taskbuilder;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type EncodedBatchF32 = losses::EncodedBatch<f32>;
pub type EncodedBatchF64 = losses::EncodedBatch<f64>;
pub type LossOutputF32 = losses::LossOutput<f32>;
pub type LossOutputF64 = losses::LossOutput<f64>;
