//! Line-level congestion, timing and slack prediction for Verilog sources.
//!
//! The pipeline pools token hidden states into line and module embeddings,
//! compresses `[line; module]` with an encoder–decoder network, appends the
//! latents of neighbouring lines and feeds the result to boosted trees or a
//! logistic head.

pub mod corpus;
pub mod embedding;
pub mod synthetic;
pub mod reducer;
pub mod features;
pub mod heads;
pub mod eval;
pub mod bundle;
pub mod pipeline;
