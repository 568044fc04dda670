//! Graph VAE trained with a joint edge and graph-statistic objective.
//!
//! The decoder emits a soft adjacency matrix; training matches both its
//! entries and a set of differentiable statistics of it (degree histogram,
//! random-walk transition matrices, triangle count) to the training graphs,
//! with one closed-form Gaussian variance per statistic. Generated sets are
//! scored against held-out graphs with [`eval`].

pub mod config;
pub mod dataset;
pub mod descriptors;
pub mod error;
pub mod eval;
pub mod generators;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod objective;
pub mod ordering;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{pad_to, Graph, PaddedGraph};
