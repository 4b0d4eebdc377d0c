//! Federated dropout over a wireless edge network, at desk scale.
//!
//! Each training round, every device receives a random subnet of the global
//! model (weight-level dropout with 1/(1-rate) rescaling), trains it locally,
//! and uploads it for zero-padded aggregation. Smaller subnets are cheaper to
//! ship and to train but add gradient variance, so the per-round dropout rates
//! and the bandwidth split across devices are a joint resource-allocation
//! problem. This crate provides:
//!
//! - [`dropout`]: mask creation/application and subnet size accounting
//! - [`learning`]: tiny differentiable models (MLP, quadratic), exact
//!   gradients and Hessian-vector products, and empirical estimation of the
//!   smoothness/variance constants used by the convergence bounds
//! - [`wireless`]: fading channels and the per-round latency/energy models
//! - [`optimizer`]: the convex per-round allocation problem solved by a
//!   primal-dual method with closed-form primal updates
//! - [`protocol`]: the five-step round and the multi-round training loop
//! - [`analysis`]: numerical verification of the variance and convergence
//!   bounds that motivate the allocation objective
//! - [`harness`]: experiment configs, data partitioning, sweeps, CSV output

pub mod analysis;
pub mod dropout;
pub mod error;
pub mod harness;
pub mod learning;
pub mod optimizer;
pub mod protocol;
pub mod rng;
pub mod wireless;

pub use error::{Error, Result};
