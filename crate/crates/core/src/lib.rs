//! Cross-scenario item graphs and the multi-graph fusion network.
//!
//! The crate covers the whole offline pipeline:
//!
//! - [`synthgen`]: deterministic multi-scenario catalogs and watch logs
//! - [`graph_builder`]: log parsing, cleaning, transition pairs and graph construction
//! - [`graph`]: the cross-scenario multi-graph, neighbor sampling and the binary graph file
//! - [`model`]: forward pass and hand-written reverse pass of the fusion network
//! - [`training`]: triplet sampling, BPR loss, Adam and the training loop
//! - [`eval`]: exact inner-product retrieval, offline metrics and PCA export
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise. Results are
//! bit-identical in both builds.

mod binio;
pub mod error;
pub mod eval;
pub mod graph;
pub mod graph_builder;
pub mod model;
pub mod par;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};

/// Width of every latent node vector.
pub const EMBED_DIM: usize = 128;
