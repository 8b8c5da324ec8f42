//! Composite neural networks assembled from frozen pre-trained components.
//!
//! A composite network is a rooted DAG whose leaves reference components
//! (pre-trained and frozen, or non-instantiated and trainable) and whose
//! inner nodes are linear combinations with bias or elementwise activations.
//!
//! - [`model`]: components, networks, datasets, evaluation, loss, parameter counts
//! - [`linear_solver`]: closed-form optimal combination and assumption checks
//! - [`scaled_activation`]: affine sandwiches that make σ emulate a linear combiner
//! - [`trainer`]: backpropagation and minibatch SGD over trainable parameters
//! - [`constructor`]: deep binary, balanced and exhaustive construction
//! - [`theory_lab`]: Monte Carlo checks of the improvement probabilities
//! - [`data_io`]: synthetic tasks, CSV, grid imputation, time interpolation
//! - [`cli`]: the `compnet` command line

// `!(x > 0.0)` style checks deliberately reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod cli;
pub mod constructor;
pub mod data_io;
pub mod error;
pub mod linear_solver;
pub mod matrix;
pub mod model;
pub mod rng;
pub mod scaled_activation;
pub mod theory_lab;
pub mod trainer;

pub use activation::Activation;
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use model::{
    count_parameters, evaluate, loss_l2, Component, ComponentKind, CompositeNetwork, Dataset, Model, Registry,
    Role, Split,
};
