//! The case-study models and a linear-Gaussian test model.

pub mod linear;
pub mod npzd;
mod ode;
pub mod pz;
pub mod simulate;

pub use linear::LinearGaussianModel;
pub use npzd::{npzd_rates, NpzdConstants, NpzdModel, NpzdParams, NpzdRates, NpzdState};
pub use pz::{PzConstants, PzModel, PzParams, PzState};
pub use simulate::{simulate_dataset, Dataset, GroundTruth, Simulation};
