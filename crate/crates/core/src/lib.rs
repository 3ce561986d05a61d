//! Wide-area ground-to-aerial geolocalization on a coarse satellite-tile grid.
//!
//! The pipeline: a [`grid::TileGrid`] partitions the search area into
//! non-overlapping tiles, each with a precomputed embedding in an
//! [`embeddings::EmbeddingDb`]. At every time step a ground embedding is
//! compared with every tile to form a similarity row, which a particle
//! [`filter`] consumes together with odometry. The [`sim`] module drives whole
//! scenarios against a calibrated synthetic oracle, [`loss`] holds the
//! binomial/trinomial metric-learning losses and a toy trainer, and [`bench`]
//! models storage and computation scaling.

pub mod artifact;
pub mod bench;
pub mod embeddings;
pub mod error;
pub mod filter;
pub mod grid;
pub mod loss;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
