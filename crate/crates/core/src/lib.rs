//! Knowledge base completion with graph-propagated translation embeddings.
//!
//! Entity vectors are computed by pooling transformed neighbor vectors over
//! the knowledge graph and scored with a translation model. Because the
//! vectors come from neighborhoods, entities that never appeared during
//! training can be embedded from a handful of auxiliary triplets.

pub mod bundle;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod exec;
pub mod kg;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod selfcheck;
pub mod trainer;

pub use error::{Error, Result};
