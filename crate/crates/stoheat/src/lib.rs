//! Numerical laboratory for the one-dimensional stochastic heat equation
//!
//! ```text
//!     du/dt = (nu/2) d^2u/dx^2 + rho(u) W'(t,x),    u(0,.) = mu,
//! ```
//!
//! driven by space-time white noise, with measure-valued ("rough") initial
//! data: signed atoms plus an optional density that may grow like
//! `exp(c |x|^a)`, `a < 2`.
//!
//! The crate has three legs that check each other:
//!
//! * **Closed forms** ([`kernel`], [`moments`]): heat-kernel identities,
//!   the moment kernels `K`/`H`, and exact second moments for quasi-linear
//!   noise coefficients, all validated against adaptive quadrature oracles.
//! * **Simulation** ([`simulate`]): a seeded, schedule-independent Monte
//!   Carlo finite-difference solver for the mild (Walsh) formulation.
//! * **Estimation** ([`estimator`], [`constants`]): structure-function
//!   Holder-exponent fits from simulated ensembles, and computable
//!   moment-increment bound constants they are checked against.
//!
//! [`verify`] bundles the identity/inequality checks into a randomized
//! suite suitable for CI (`stoheat verify` on the command line).

pub mod artifact;
pub mod constants;
pub mod error;
pub mod estimator;
pub mod kernel;
pub mod measure;
pub mod moments;
pub mod quad;
pub mod rng;
pub mod simulate;
pub mod verify;

pub use error::{Error, Result};
pub use kernel::KernelParams;
pub use measure::{DensitySpec, GrowthClass, InitialMeasure};
pub use moments::{MomentKernel, RhoSpec};
pub use quad::QuadratureSpec;
pub use simulate::{FieldEnsemble, GridSpec, NoiseSeed};
