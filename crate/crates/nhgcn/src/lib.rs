//! Neighborhood-homophily-guided graph convolutional networks.
//!
//! The crate provides the NH metric with its k-hop neighborhood index,
//! masked GCN-style architectures whose message propagation is guided
//! by estimated NH values, an alternating training procedure that
//! re-estimates NH from predicted labels at validation improvements,
//! and the data/CLI plumbing to run reproducible experiments.

pub mod autodiff;
pub mod data;
pub mod defaults;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
