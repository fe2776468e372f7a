//! Training toolkit for feedforward RELU networks laid out as DAGs.
//!
//! The crate implements path-normalized stochastic gradient descent
//! (Path-SGD) next to plain SGD and AdaGrad, together with the machinery
//! needed to study it: the rescaling symmetry of RELU networks, group and
//! path norms computed by dynamic programming, brute-force path oracles,
//! balanced/unbalanced initialization, dropout, MNIST IDX ingestion and a
//! small experiment harness that writes learning curves as CSV.

pub mod data;
pub mod error;
pub mod graph;
pub mod harness;
pub mod init;
pub mod netfwd;
pub mod optim;
pub mod pathnorms;
pub mod rescale;

mod dense;

pub use error::{Error, Result};
pub use graph::{LevelSets, NetworkGraph, WeightVector};
