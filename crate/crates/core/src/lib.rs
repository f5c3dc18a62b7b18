//! Privacy-preserving descriptor representations by lifting feature vectors
//! to affine subspaces.
//!
//! A descriptor `d ∈ ℝⁿ` is replaced by an `m`-dimensional affine subspace
//! that contains it, optionally together with real-world-like samples from a
//! codebook. Matching then uses point-to-subspace or subspace-to-subspace
//! distances, and the crate ships the attacks used to measure how much of
//! `d` an adversary can still recover.

pub mod distance;
pub mod attacks;
pub mod codebook;
pub mod error;
pub mod format;
pub mod lifting;
pub mod linalg;
pub mod matching;
pub mod rng;
pub mod stats;
pub mod subspace;

pub use error::{Error, Result};
pub use linalg::RowMatrix;
pub use subspace::{AffineSubspace, ClosestPair, Descriptor, DualSubspace, PairCoefficients};
