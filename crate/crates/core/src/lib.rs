//! Declarative GAN specifications compiled to shape-checked graphs and trained
//! on a native reverse-mode autodiff runtime.
//!
//! The pipeline is `spec` (parse, validate, resolve) → `models` (presets,
//! losses, optimizers, training processes) → `harness` (epochs, the
//! mix-and-match matrix, sample grids), all executing on `graph`.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod harness;
pub mod kernels;
pub mod layers;
pub mod models;
pub mod rng;
pub mod sparse;
pub mod spec;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use rng::RngStream;
pub use tensor::Tensor;
