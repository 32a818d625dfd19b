//! Particle MCMC for collapsed state-space models.
//!
//! Models are written over their standard normal noise terms (see
//! [`StateSpaceModel`]). The auxiliary particle filter in [`apf`] estimates
//! the marginal likelihood with bootstrap or unscented proposals, [`pmmh`]
//! wraps it in a Metropolis-Hastings sampler, and [`diagnostics`] measures
//! estimator quality through the conditional acceptance rate.

// `!(x > 0.0)` is used on purpose so NaN takes the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apf;
pub mod diagnostics;
pub mod error;
pub mod kvfile;
pub mod linalg;
pub mod model;
pub mod models;
pub mod pmmh;
pub mod prior;
pub mod rng;
pub mod ukf;

pub use error::{Error, Result};
pub use kvfile::KvFile;
pub use linalg::{chol_rank1_downdate, CholeskyFactor};
pub use model::{noise_to_state, Dims, Factorization, Integrator, ObsLink, StateSpaceModel};
pub use prior::{Prior, Univariate};
pub use rng::{draw_stream, draw_uniform, RngStream};
