//! Joint node and relation embedding for multi-relational graphs via
//! composition-based graph convolution, with training and evaluation
//! pipelines for link prediction, node classification, and graph
//! classification.

pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod numeric;
pub mod scoring;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
