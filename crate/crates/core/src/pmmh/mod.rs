//! Particle marginal Metropolis-Hastings over `(x0, θ)` or `θ`.
//!
//! Proposals are Gaussian random walks in unconstrained coordinates, so the
//! proposal densities cancel and the prior carries the log-Jacobian.

mod chain;
mod estimator;
mod tune;

pub use chain::{
    mh_step, read_chain_draws, run_chain, run_chain_on, run_chains, write_chain, write_chain_csv,
    Chain, ChainConfig, ChainSample, ChainStats, StepOutcome,
};
pub use estimator::{
    chain_prior, split_chain_point, KalmanLikelihood, LikelihoodEstimator, ParticleLikelihood,
};
pub use tune::{initial_scale, tune_scale, TuneConfig, TuneResult};
