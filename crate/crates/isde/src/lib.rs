//! Density estimation under an independence structure: a multivariate density
//! is modelled as a product of marginal densities over the blocks of a feature
//! partition, and the partition itself is selected to maximize a held-out
//! log-likelihood.
//!
//! The pipeline has two decoupled phases:
//!
//! 1. **Subset scoring** ([`scoring`]): fit one marginal estimator per feature
//!    subset `S` with `|S| <= k` on an estimation sample `W`, then record its
//!    mean log-density `l_n(S)` on a disjoint scoring sample `Z`.
//! 2. **Partition selection** ([`solver`]): maximize `sum_{S in P} l_n(S)`
//!    over all partitions with blocks of size at most `k` — an exact-cover
//!    problem solved exactly (bitmask DP or branch-and-bound), with K-best,
//!    K-worst and brute-force oracle modes.
//!
//! Around the core sit the baselines ([`baselines`]: full-dimensional CV-KDE
//! and forest density estimation), exact counting and enumeration over subset
//! and partition spaces ([`combinatorics`]), partition-space metrics and
//! random walks ([`partition_space`]), closed-form Gaussian machinery
//! ([`gaussian`]), and the synthetic benchmark generators ([`synth`]).

pub mod baselines;
pub mod combinatorics;
pub mod data;
mod error;
pub mod gaussian;
pub mod kde;
pub mod manifest;
pub mod partition_space;
pub mod scoring;
pub mod seed;
pub mod solver;
pub mod synth;

pub use data::{Dataset, FeatureSubset, Partition, SplitSpec};
pub use error::{Error, Result};
