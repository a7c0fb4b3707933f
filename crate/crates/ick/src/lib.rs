//! Implicit composite kernel regression.
//!
//! Multi-source inputs are processed by per-source branches — a
//! fully-connected network for the high-dimensional source, kernel-to-latent
//! maps (Nystrom or random Fourier features) for the others — and combined by
//! a chained inner product. The crate also carries the exact composite-kernel
//! GP posterior, a deep-ensemble posterior approximation, and the metrics
//! used to check that those two agree.

pub mod data;
pub mod ensemble;
pub mod error;
pub mod inputs;
pub mod kernels;
pub mod latentmap;
pub mod nn;
pub mod linalg;
pub mod metrics;
pub mod model;

pub use error::{IckError, Result};
