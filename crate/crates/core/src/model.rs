//! State-space models collapsed to their noise terms.
//!
//! A model is a deterministic transition `x_t = f(u_t, x_{t-1}, θ)` driven by
//! standard normal `u_t`, plus an observation density. Observations are
//! Gaussian after a per-component link (identity or log), which is what the
//! unscented filters condition on.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::prior::{normal_log_density, Prior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_x: usize,
    pub n_u: usize,
    pub n_theta: usize,
    pub n_y: usize,
}

/// Where the initial condition is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factorization {
    /// `x0` is importance sampled per particle from its prior.
    X0InFilter,
    /// `x0` is part of the Metropolis-Hastings state.
    X0InChain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsLink {
    Identity,
    Log,
}

impl ObsLink {
    pub fn forward(self, y: f64) -> Result<f64> {
        match self {
            ObsLink::Identity => Ok(y),
            ObsLink::Log if y > 0.0 => Ok(y.ln()),
            ObsLink::Log => Err(Error::InvalidObservation(format!(
                "log-normal observation must be positive, got {y}"
            ))),
        }
    }

    pub fn inverse(self, z: f64) -> f64 {
        match self {
            ObsLink::Identity => z,
            ObsLink::Log => z.exp(),
        }
    }

    /// `ln |dz/dy|`.
    pub fn log_jacobian(self, y: f64) -> f64 {
        match self {
            ObsLink::Identity => 0.0,
            ObsLink::Log => -y.ln(),
        }
    }
}

/// Fixed-step integrator metadata carried into output manifests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Integrator {
    pub method: &'static str,
    pub substep_days: f64,
}

pub trait StateSpaceModel: Send + Sync {
    fn name(&self) -> &str;

    fn dims(&self) -> Dims;

    /// One step of the process model. Must be a pure function of its inputs.
    fn transition(&self, u: &[f64], x: &[f64], theta: &[f64]) -> Result<Vec<f64>>;

    /// Mean of the linked observation, `E[link(y) | x]`.
    fn observation_mean(&self, x: &[f64], theta: &[f64]) -> Result<Vec<f64>>;

    /// Standard deviations of the linked observation noise.
    fn observation_sd(&self, theta: &[f64]) -> Vec<f64>;

    fn observation_link(&self) -> ObsLink;

    fn theta_prior(&self) -> &Prior;

    fn x0_prior(&self) -> &Prior;

    fn default_factorization(&self) -> Factorization;

    fn integrator(&self) -> Option<Integrator> {
        None
    }

    fn noise_names(&self) -> Vec<String> {
        (1..=self.dims().n_u).map(|i| format!("u_{i}")).collect()
    }

    fn observation_names(&self) -> Vec<String> {
        (1..=self.dims().n_y).map(|i| format!("y_{i}")).collect()
    }

    /// `ln p(y | x, θ)`. Non-finite entries of `y` are treated as missing.
    fn obs_log_density(&self, y: &[f64], x: &[f64], theta: &[f64]) -> Result<f64> {
        let dims = self.dims();
        check_len("observation", dims.n_y, y.len())?;
        let link = self.observation_link();
        let mean = self.observation_mean(x, theta)?;
        let sd = self.observation_sd(theta);
        let mut total = 0.0;
        for i in 0..dims.n_y {
            if !y[i].is_finite() {
                continue;
            }
            let z = link.forward(y[i])?;
            total += normal_log_density(z, mean[i], sd[i]) + link.log_jacobian(y[i]);
        }
        Ok(if total.is_nan() {
            f64::NEG_INFINITY
        } else {
            total
        })
    }
}

/// Replays `x_s = f(u_s, x_{s-1}, θ)` from `x0`, returning `x_1..x_t`.
pub fn noise_to_state<M: StateSpaceModel + ?Sized>(
    model: &M,
    x0: &[f64],
    theta: &[f64],
    u_seq: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let dims = model.dims();
    check_len("initial state", dims.n_x, x0.len())?;
    check_len("parameters", dims.n_theta, theta.len())?;
    let mut out = Vec::with_capacity(u_seq.len());
    let mut x = x0.to_vec();
    for u in u_seq {
        check_len("noise term", dims.n_u, u.len())?;
        x = model.transition(u, &x, theta)?;
        out.push(x.clone());
    }
    Ok(out)
}
