//! Random-search selection of sparse sub-networks at initialization.
//!
//! A randomly initialized parent network is masked into a population of
//! sparse sub-networks of identical sparsity. Each generation every member is
//! scored on a fresh validation batch (fitness = negative cross-entropy,
//! no training), the fittest is kept and the rest are resampled. The final
//! winner is trained with momentum SGD and compared against a randomly drawn
//! mask of the same sparsity.

pub mod cli;
pub mod data;
pub mod error;
pub mod network;
pub mod numerics;
pub mod pipeline;
pub mod search;
pub mod sparsity;

pub use error::{Error, Result};
