//! Auxiliary particle filter over noise terms.
//!
//! At each step the previous normalized weights are multiplied by a pilot
//! value `g` (stage one), ancestors are resampled on the product, noise is
//! drawn from the scheme's proposal, and each new particle is weighted by
//! `p(y | x) υ / g` (stage two), with `υ` the prior-to-proposal density ratio
//! of the noise. The likelihood increment is `(mean w)(Σ ω)`.

mod filter;
mod resample;
mod weights;

pub use filter::{
    count_propagations, extract_trajectory, run_filter, FilterConfig, FilterRun,
    LikelihoodEstimate, ParticleSystem, ProposalScheme, Trajectory,
};
pub use resample::{resample, ResampleMethod};
pub use weights::{
    effective_sample_size, likelihood_increment, log_sum_exp, log_upsilon, normalize_log_weights,
};
