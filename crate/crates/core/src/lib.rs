//! Concept-bottleneck classifiers built on top of precomputed black-box
//! activations.
//!
//! The pipeline has four stages:
//!
//! 1. [`discovery`] factorizes an activation matrix `A ≈ U·Cᵀ` to obtain a
//!    dictionary of concept vectors (NMF by default, PCA and K-Means as
//!    alternatives).
//! 2. [`projection`] maps activations onto the dictionary.
//! 3. [`training`] fits a gated sparse linear head ([`model`]) whose gate
//!    `max(0, p − o)` selects a small set of concepts per input.
//! 4. [`analysis`] and [`editing`] measure, explain and repair the resulting
//!    classifier.
//!
//! All arithmetic is carried out in `f64`.

pub mod analysis;
pub mod discovery;
pub mod editing;
pub mod error;
pub mod model;
pub mod projection;
mod rng;
pub mod synthetic;
pub mod tensor_io;
pub mod training;

pub use error::{Error, Result};
