//! Knowledge-graph embeddings that score each triple in a Poincaré ball, a
//! complex space and a Euclidean space, and mix the three scores with learned
//! per-relation attention.
//!
//! The crate is organized bottom-up: [`geometry`] provides the ball
//! primitives, [`model`] owns parameters and checkpoints, [`scoring`]
//! evaluates triples, [`training`] optimizes the composite loss and
//! [`evaluation`] computes filtered ranking metrics. [`data`] handles triple
//! files, splits and the synthetic test graph.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod model;
pub mod scoring;
pub mod training;

pub use error::{Error, Result};
