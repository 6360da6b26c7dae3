//! Tabular robust constrained reinforcement learning under δ-contamination.
//!
//! The crate is `no_std` and only needs `alloc`. It contains:
//!
//! - [`mdp`]: tabular constrained MDPs, softmax policies, non-robust
//!   evaluation and discounted visitation distributions.
//! - [`robust`]: the δ-contamination uncertainty set, the exact and
//!   log-sum-exp smoothed robust Bellman operators, and robust evaluation.
//! - [`gradient`]: the explicit gradient of the smoothed robust value for
//!   softmax policies, with a finite-difference oracle.
//! - [`optimizer`]: the exact-gradient robust primal-dual method, its step
//!   size schedule, the gradient mapping and the dual bound.
//! - [`td`]: sample-based smoothed robust TD estimation.
//! - [`online`]: the model-free primal-dual method and the two baselines.
//! - [`envs`]: seeded benchmark environment generators.
//! - [`counterexample`]: the three-state witness that robust visitation
//!   distributions do not form a convex set.
//!
//! IO, file formats and the command line live in the `robust-crl-cli` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod counterexample;
pub mod envs;
mod error;
pub mod gradient;
pub mod linalg;
mod math;
pub mod mdp;
pub mod online;
pub mod optimizer;
pub mod rng;
pub mod robust;
pub mod stats;
pub mod td;

pub use error::{Error, Result};
pub use mdp::{ActionProbs, Kernel, Signal, SoftmaxPolicy, SolverOptions, TabularCMDP, Visitation};
pub use robust::{ContaminationSet, RobustValues, SmoothingParam};
