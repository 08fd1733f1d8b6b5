//! Adaptive long-range aware encoding of brain graphs and a small graph
//! transformer for graph-level classification.

pub mod alga;
pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
