//! Particle filters for discretely observed slow–fast diffusions.
//!
//! The crate compares three ways of moving particles between observations:
//! forward Euler on the full stiff system, Euler on the closed-form averaged
//! equation, and a heterogeneous-multiscale sampler that estimates the
//! averaged drift and variance on the fly from short fast bursts. Exact and
//! brute-force oracles, rate fits and random-variate cost accounting support
//! comparing them.

// `!(x > 0.0)` style guards deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod filter;
pub mod integrator;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod rng;

pub use filter::{run_filter, DegeneratePolicy, FilterError, FilterTrajectory, ParticleEnsemble};
pub use integrator::{HmmParams, IntegrationError, KernelSample};
pub use kernel::{KernelChoice, KernelSpec, TransitionKernel};
pub use model::{BenchmarkModel, MultiscaleModel, ObservationModel};
pub use rng::RngStream;
