//! Fixed orthonormal representation bottlenecks for deep reinforcement
//! learning.
//!
//! An encoder produces features `z ∈ R^D`; a fixed matrix `B ∈ R^{D×k}` with
//! orthonormal columns compresses them to `h = Bᵀz`, and only `h` reaches the
//! value and policy heads. This crate provides the dense kernels, the
//! projection constructions, a small MLP with manual backprop, numerical
//! certificates of the expressivity/trainability results, desk-scale agents
//! and environments, representation diagnostics and the experiment harness.

pub mod agents;
pub mod diagnostics;
pub mod envs;
pub mod harness;
pub mod linalg;
pub mod nn;
pub mod projection;
pub mod realizability;
pub mod rng;

pub use linalg::Matrix;
pub use projection::{make_basis, ProjectionBasis, ProjectionMethod};
pub use rng::SeededRng;
