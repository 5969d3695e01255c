//! Late-interaction text–video retrieval over precomputed token embeddings.
//!
//! The crate scores text queries against video documents with six
//! interaction mechanisms (dot product, hierarchical, MLP, cross
//! transformer, token-wise and weighted token-wise), trains the lightweight
//! weight heads with a contrastive loss plus a channel decorrelation
//! regularizer, and serves exact top-k retrieval from an immutable index.

pub mod cli;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod index;
pub mod interaction;
pub mod losses;
pub mod numerics;
pub mod train;

pub use error::{Error, Result};
