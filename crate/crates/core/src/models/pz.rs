//! Phytoplankton-zooplankton model with a stochastic daily growth rate.
//!
//! State `(P, Z, α)`, parameters `(μ, σ)`, one noise term per day with
//! `α_t = μ + σ u_t`, and log-normal observations of `P`:
//!
//! ```text
//! dP/dt = α P − c P Z
//! dZ/dt = e c P Z − m_l Z − m_q Z²
//! ```

use serde::{Deserialize, Serialize};

use super::ode::rk4;
use crate::error::{check_len, Error, Result};
use crate::model::{Dims, Factorization, Integrator, ObsLink, StateSpaceModel};
use crate::prior::{normal_log_density, Prior, Univariate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PzState {
    pub p: f64,
    pub z: f64,
    pub alpha: f64,
}

impl PzState {
    pub fn from_slice(x: &[f64]) -> Result<Self> {
        check_len("PZ state", 3, x.len())?;
        Ok(Self {
            p: x[0],
            z: x[1],
            alpha: x[2],
        })
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.p, self.z, self.alpha]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PzParams {
    pub mu: f64,
    pub sigma: f64,
}

impl PzParams {
    pub fn from_slice(theta: &[f64]) -> Result<Self> {
        check_len("PZ parameters", 2, theta.len())?;
        Ok(Self {
            mu: theta[0],
            sigma: theta[1],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PzConstants {
    pub c: f64,
    pub e: f64,
    pub m_l: f64,
    pub m_q: f64,
    /// Standard deviation of `ln P_obs` around `ln P`.
    pub obs_sd: f64,
    pub substeps: usize,
}

impl Default for PzConstants {
    fn default() -> Self {
        Self {
            c: 0.25,
            e: 0.3,
            m_l: 0.1,
            m_q: 0.1,
            obs_sd: 0.2,
            substeps: 10,
        }
    }
}

/// Advances one day. `α` is held at `μ + σ u_t` for the whole day.
///
/// Positive `(P, Z)` are integrated in log coordinates, which keeps them
/// positive; anything else (UKF sigma points can land there) is integrated
/// directly.
pub fn pz_transition(u_t: f64, x: PzState, theta: PzParams, k: &PzConstants) -> Result<PzState> {
    let alpha = theta.mu + theta.sigma * u_t;
    let h = 1.0 / k.substeps as f64;
    let (p, z) = if x.p > 0.0 && x.z > 0.0 {
        let [lp, lz] = rk4([x.p.ln(), x.z.ln()], h, k.substeps, |s| {
            let p = s[0].exp();
            let z = s[1].exp();
            [alpha - k.c * z, k.e * k.c * p - k.m_l - k.m_q * z]
        });
        (lp.exp(), lz.exp())
    } else {
        let [p, z] = rk4([x.p, x.z], h, k.substeps, |s| {
            let (p, z) = (s[0], s[1]);
            [
                alpha * p - k.c * p * z,
                k.e * k.c * p * z - k.m_l * z - k.m_q * z * z,
            ]
        });
        (p, z)
    };
    if !(p.is_finite() && z.is_finite() && alpha.is_finite()) {
        return Err(Error::IntegrationFailure);
    }
    Ok(PzState { p, z, alpha })
}

/// `ln p(P_obs | P)` for `ln P_obs ~ N(ln P, obs_sd)`, Jacobian included.
pub fn pz_obs_logdensity(y: f64, x: &PzState, k: &PzConstants) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::InvalidObservation(format!(
            "phytoplankton observation must be positive, got {y}"
        )));
    }
    if !(x.p > 0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(normal_log_density(y.ln(), x.p.ln(), k.obs_sd) - y.ln())
}

#[derive(Debug, Clone)]
pub struct PzModel {
    pub constants: PzConstants,
    theta_prior: Prior,
    x0_prior: Prior,
}

impl Default for PzModel {
    fn default() -> Self {
        Self::new(PzConstants::default())
    }
}

impl PzModel {
    pub fn new(constants: PzConstants) -> Self {
        let theta_prior = Prior::new(
            vec!["mu".into(), "sigma".into()],
            vec![
                Univariate::Uniform {
                    lower: 0.0,
                    upper: 1.0,
                },
                Univariate::Uniform {
                    lower: 0.0,
                    upper: 0.5,
                },
            ],
        );
        // α_0 never enters a transition; its prior only fixes the dimension.
        let x0_prior = Prior::new(
            vec!["P".into(), "Z".into(), "alpha".into()],
            vec![
                Univariate::LogNormal {
                    meanlog: 2f64.ln(),
                    sdlog: 0.2,
                },
                Univariate::LogNormal {
                    meanlog: 2f64.ln(),
                    sdlog: 0.1,
                },
                Univariate::Normal {
                    mean: 0.5,
                    sd: 0.25,
                },
            ],
        );
        Self {
            constants,
            theta_prior,
            x0_prior,
        }
    }

    pub fn with_priors(mut self, theta_prior: Prior, x0_prior: Prior) -> Self {
        self.theta_prior = theta_prior;
        self.x0_prior = x0_prior;
        self
    }
}

impl StateSpaceModel for PzModel {
    fn name(&self) -> &str {
        "pz"
    }

    fn dims(&self) -> Dims {
        Dims {
            n_x: 3,
            n_u: 1,
            n_theta: 2,
            n_y: 1,
        }
    }

    fn transition(&self, u: &[f64], x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        check_len("PZ noise", 1, u.len())?;
        let next = pz_transition(
            u[0],
            PzState::from_slice(x)?,
            PzParams::from_slice(theta)?,
            &self.constants,
        )?;
        Ok(next.to_vec())
    }

    fn observation_mean(&self, x: &[f64], _theta: &[f64]) -> Result<Vec<f64>> {
        check_len("PZ state", 3, x.len())?;
        Ok(vec![x[0].ln()])
    }

    fn observation_sd(&self, _theta: &[f64]) -> Vec<f64> {
        vec![self.constants.obs_sd]
    }

    fn observation_link(&self) -> ObsLink {
        ObsLink::Log
    }

    fn theta_prior(&self) -> &Prior {
        &self.theta_prior
    }

    fn x0_prior(&self) -> &Prior {
        &self.x0_prior
    }

    fn default_factorization(&self) -> Factorization {
        Factorization::X0InFilter
    }

    fn integrator(&self) -> Option<Integrator> {
        Some(Integrator {
            method: "rk4-log",
            substep_days: 1.0 / self.constants.substeps as f64,
        })
    }

    fn noise_names(&self) -> Vec<String> {
        vec!["xi_alpha".into()]
    }

    fn observation_names(&self) -> Vec<String> {
        vec!["P_obs".into()]
    }
}
