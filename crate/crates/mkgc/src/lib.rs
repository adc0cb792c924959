//! Multilingual knowledge-graph completion with alignment-aware graph
//! encoders.
//!
//! The crate fuses several language-specific knowledge graphs into one
//! shared graph via cross-lingual entity-alignment edges, trains a
//! relation-aware attention encoder with a translational decoder, and
//! iteratively proposes new alignment pairs from the learned embeddings
//! so that sparse languages benefit from rich ones.
//!
//! Module map:
//! - [`autograd`]: dense tensors, a reverse-mode tape, Adam, gradient
//!   checking, and the binary tensor-file format.
//! - [`graph`]: language graphs, the fused multilingual graph, masking,
//!   augmentation, neighborhood sampling, synthetic data, and TSV I/O.
//! - [`encoder`]: the relation-aware attention message-passing encoder.
//! - [`kgc`]: the translational decoder, ranking, and filtered metrics.
//! - [`alignment`]: cross-lingual similarity, neighborhood-scaled
//!   matching, pair proposal, and the alignment loss.
//! - [`trainer`]: the alternating training loop, ablations, and
//!   checkpointing.

pub mod alignment;
pub mod autograd;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod kgc;
pub mod trainer;

pub use error::{Error, Result};
