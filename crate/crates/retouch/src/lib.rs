//! Deterministic parametric photo retouching with a small training lab
//! on top of it.
//!
//! The bottom layer is a fixed-order edit pipeline over linear-light RGB
//! images, driven by a tiny text DSL of named adjustments. On top of that
//! sit the lab pieces: perturbation-built preference pairs, a
//! goal-conditioned reward scorer, a Gaussian linear policy trained by
//! ridge regression and group-relative policy gradients, an alternation
//! loop that retrains the reward on policy-generated pairs, and a
//! procedural benchmark.
//!
//! Everything is bitwise deterministic for a given seed: all randomness
//! flows through explicitly seeded ChaCha streams, and parallel sections
//! only ever map independent items and reduce in a fixed order.

pub mod bench;
pub mod cli;
pub mod color;
pub mod corpus;
pub mod dsl;
pub mod engine;
pub mod goal;
pub mod grm;
pub mod metrics;
pub mod perturb;
pub mod pgrt;
pub mod policy;
pub mod raster;
pub mod seed;
