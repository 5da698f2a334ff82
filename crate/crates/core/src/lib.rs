//! Federated learning simulator combining adaptive top-k gradient
//! sparsification with error feedback, additive RLWE (CKKS-style)
//! aggregation over quantized lane packing, Gaussian-mechanism privacy
//! accounting and a membership-inference harness.
//!
//! The library is organised by pipeline stage:
//!
//! - [`model`]: synthetic data, logistic / MLP classifiers, local SGD and
//!   Dirichlet non-IID partitioning.
//! - [`sparsifier`]: adaptive top-k selection with EMA thresholding and
//!   error memory.
//! - [`he`]: negacyclic NTT, canonical-embedding encoding, RLWE keys,
//!   encryption and homomorphic addition, lane packing.
//! - [`dp`]: clipping, Gaussian noise and (ε, δ) bounds.
//! - [`fl`]: the round protocol over simulated clients.
//! - [`accounting`]: closed-form communication arithmetic.
//! - [`attacks`]: confidence-threshold membership inference.
//! - [`convergence`]: sparse-SGD trajectories on quadratics.
//! - [`manifest`], [`runner`], [`stats`], [`plot`]: experiment manifests,
//!   report writing, paired t-test and SVG output used by the CLI.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod accounting;
pub mod attacks;
pub mod convergence;
pub mod dp;
pub mod error;
pub mod fl;
pub mod he;
pub mod manifest;
pub mod model;
pub mod plot;
pub mod rng;
pub mod runner;
pub mod sparsifier;
pub mod stats;

pub use error::{Error, Result};
