//! Distributed value iteration with nonparametric Bellman mappings and
//! Laplacian consensus over agent networks.

pub mod bellman;
pub mod consensus;
pub mod env;
pub mod error;
pub mod features;
pub mod graph;
pub mod harness;
pub mod io;

pub use error::{Error, Result};
