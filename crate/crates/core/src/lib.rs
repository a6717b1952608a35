//! Measure-valued simulation of the M/GI/∞ queue, its fluid limit, and the
//! Gaussian limit of the rescaled error process.
//!
//! The crate is organized around the profile process: a point measure with
//! one atom per customer at their remaining processing time. Departed
//! customers stay as nonpositive atoms, so congestion, completed service and
//! workload are all plain integrals against the profile.
//!
//! * [`measure`] — atomic measures, the shift/duality algebra, performance
//!   functionals.
//! * [`testfn`] — evaluable test functions with derivatives and norms.
//! * [`law`] — service-time distributions and the scaling scheme.
//! * [`sim`] — exact event-driven path generation and snapshots.
//! * [`scaling`] — rescaled systems, the scaled martingale, its predicted
//!   quadratic variation.
//! * [`transport`] — the operator calculus on measure-valued paths and the
//!   closed-form transport solver.
//! * [`fluid`] — the deterministic limit profile and performance curves.
//! * [`diffusion`] — orthonormal bases, the limit covariance, and the
//!   Gaussian limit sampler.
//! * [`ensemble`] — replicated runs, moment statistics, comparisons against
//!   the fluid and diffusion predictions.

// Guards like `!(x > 0.0)` deliberately reject NaN along with the
// out-of-range values; rewriting them as `x <= 0.0` would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod ensemble;
pub mod error;
pub mod fluid;
pub mod law;
pub mod measure;
pub mod quad;
pub mod rng;
pub mod scaling;
pub mod sim;
pub mod stats;
pub mod testfn;
pub mod transport;

pub use error::{CoreError, Result};
pub use law::{ScalingScheme, ServiceLaw};
pub use measure::{Atom, PerformanceTriple, PointMeasure};
pub use testfn::{Closure, FunctionKind, TestFunction};
