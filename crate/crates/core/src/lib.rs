//! Graph classification from histograms of latent node features.
//!
//! The pipeline runs independent graph convolutions over powers of the
//! symmetric normalized Laplacian, mixes the concatenated node embeddings
//! through two dense layers, bins every embedding dimension into a fixed
//! number of buckets over `[-1, 1]`, and classifies the resulting
//! multi-channel histogram with a small 1-D convolutional network.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the command
//! line and anything else touching the operating system live in the
//! `graphhist` crate.
#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
mod math;

pub mod dataset;
pub mod gradcheck;
pub mod graph;
pub mod histbin;
pub mod kernels;
pub mod laplacian;
pub mod model;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::Graph;
pub use laplacian::SparseLaplacian;
pub use tensor::Tensor;
