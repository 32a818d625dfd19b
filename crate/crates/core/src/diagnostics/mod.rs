//! Estimator quality and convergence diagnostics.

mod car;
mod rank;
mod rhat;
mod survey;

pub use car::{car_direct, car_sorted, CarEstimate, UNDERFLOW_NATS};
pub use rank::{average_ranks, empirical_cdf, rank_export, spearman, write_rank_export, Spearman};
pub use rhat::{rhat_multivariate, Rhat};
pub use survey::{car_survey, grid_points, prior_draws, CarSurvey};
