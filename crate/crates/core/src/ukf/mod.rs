//! Unscented transform, Gaussian conditioning, and the UKF look-aheads and
//! joint smoother built on them.

mod joint;
mod lookahead;
mod transform;

pub use joint::{joint_prior, joint_ukf_init, JointUkf};
pub use lookahead::{
    cupf_conditional, cupf_sigma_count, identity_downdate, identity_minus_outer_full,
    mupf_lookahead, mupf_sigma_count, CupfConditional, MupfLookahead,
};
pub use transform::{
    condition_moments, condition_on_observation, sigma_points, unscented_transform, Conditioned,
    GaussianBelief, SigmaPointSet, UtOutput, UtParams,
};
