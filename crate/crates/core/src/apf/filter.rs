use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::resample::{resample, ResampleMethod};
use super::weights::{
    effective_sample_size, likelihood_increment, log_sum_exp, log_upsilon, normalize_log_weights,
};
use crate::error::{check_len, Error, Result};
use crate::model::{Dims, StateSpaceModel};
use crate::rng::{draw_stream, draw_uniform, RngStream};
use crate::ukf::{
    cupf_conditional, cupf_sigma_count, mupf_lookahead, mupf_sigma_count, GaussianBelief, UtParams,
};

/// Proposal scheme: how `u_t` is drawn and whether resampling looks ahead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProposalScheme {
    /// Bootstrap: `u_t ~ N(0, I)`, no look-ahead.
    #[serde(rename = "PF0")]
    Pf0,
    /// Bootstrap with a pilot at `u_t = 0`.
    #[serde(rename = "PF1")]
    Pf1,
    /// Shared UKF proposal from the marginal look-ahead.
    #[serde(rename = "MUPF0")]
    Mupf0,
    /// As MUPF0, with a pilot at the proposal mean.
    #[serde(rename = "MUPF1")]
    Mupf1,
    /// Per-particle UKF proposal.
    #[serde(rename = "CUPF0")]
    Cupf0,
    /// As CUPF0, with the UKF predictive density as pilot.
    #[serde(rename = "CUPF1")]
    Cupf1,
}

impl ProposalScheme {
    pub const ALL: [ProposalScheme; 6] = [
        ProposalScheme::Pf0,
        ProposalScheme::Pf1,
        ProposalScheme::Mupf0,
        ProposalScheme::Mupf1,
        ProposalScheme::Cupf0,
        ProposalScheme::Cupf1,
    ];

    pub fn has_pilot(self) -> bool {
        matches!(
            self,
            ProposalScheme::Pf1 | ProposalScheme::Mupf1 | ProposalScheme::Cupf1
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProposalScheme::Pf0 => "PF0",
            ProposalScheme::Pf1 => "PF1",
            ProposalScheme::Mupf0 => "MUPF0",
            ProposalScheme::Mupf1 => "MUPF1",
            ProposalScheme::Cupf0 => "CUPF0",
            ProposalScheme::Cupf1 => "CUPF1",
        }
    }
}

impl fmt::Display for ProposalScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProposalScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProposalScheme::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown proposal scheme `{s}`")))
    }
}

/// Transition evaluations per run of `t` steps with `m` particles.
pub fn count_propagations(scheme: ProposalScheme, m: u64, dims: Dims, t: u64) -> u64 {
    let mupf = mupf_sigma_count(dims) as u64;
    let cupf = cupf_sigma_count(dims) as u64;
    let per_step = match scheme {
        ProposalScheme::Pf0 => m,
        ProposalScheme::Pf1 => 2 * m,
        ProposalScheme::Mupf0 => m + mupf,
        ProposalScheme::Mupf1 => 2 * m + mupf,
        ProposalScheme::Cupf0 | ProposalScheme::Cupf1 => m + m * cupf,
    };
    per_step * t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub scheme: ProposalScheme,
    pub m: usize,
    #[serde(default)]
    pub ut: UtParams,
    #[serde(default)]
    pub resample: ResampleMethod,
    /// Keep per-step particles and ancestors for trajectory extraction.
    #[serde(default)]
    pub keep_history: bool,
}

impl FilterConfig {
    pub fn new(scheme: ProposalScheme, m: usize) -> Self {
        Self {
            scheme,
            m,
            ut: UtParams::default(),
            resample: ResampleMethod::Multinomial,
            keep_history: false,
        }
    }

    pub fn with_history(mut self) -> Self {
        self.keep_history = true;
        self
    }
}

/// Particles at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem {
    pub x: Vec<Vec<f64>>,
    /// Noise that produced each particle; empty at time 0.
    pub u: Vec<Vec<f64>>,
    /// Stage-one log weights that selected the ancestors.
    pub log_omega: Vec<f64>,
    /// Unnormalized stage-two log weights.
    pub log_w: Vec<f64>,
    pub ancestors: Vec<usize>,
}

impl ParticleSystem {
    pub fn normalized_weights(&self) -> Option<Vec<f64>> {
        normalize_log_weights(&self.log_w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodEstimate {
    pub log_likelihood: f64,
    /// Log increments for the completed steps.
    pub increments: Vec<f64>,
    pub collapsed: bool,
    /// First time at which every weight was zero.
    pub collapse_time: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    pub estimate: LikelihoodEstimate,
    /// Particles at the last completed time.
    pub system: ParticleSystem,
    /// Initial states, one per particle.
    pub x0: Vec<Vec<f64>>,
    /// Systems at `t = 1..=T` when history was requested.
    pub history: Option<Vec<ParticleSystem>>,
    pub ess: Vec<f64>,
    /// Look-ahead steps that reverted to the prior proposal.
    pub fallbacks: usize,
}

/// Auxiliary particle filter over noise terms.
///
/// With `x0 = None` each particle draws its initial state from the model's
/// `x0` prior; otherwise all particles start at `x0`. Randomness comes from
/// `stream`: `[0, m]` for initial states, `[t, 0]` for resampling at `t` and
/// `[t, 1, m]` for the noise of particle `m`.
pub fn run_filter<M: StateSpaceModel + ?Sized>(
    model: &M,
    cfg: &FilterConfig,
    x0: Option<&[f64]>,
    theta: &[f64],
    y: &[Vec<f64>],
    stream: &RngStream,
) -> Result<FilterRun> {
    let d = model.dims();
    let m = cfg.m;
    if m == 0 {
        return Err(Error::Config("particle count must be positive".into()));
    }
    check_len("parameters", d.n_theta, theta.len())?;
    for yt in y {
        check_len("observation", d.n_y, yt.len())?;
    }
    let prior = model.x0_prior();
    let x0s: Vec<Vec<f64>> = match x0 {
        Some(x) => {
            check_len("initial state", d.n_x, x.len())?;
            vec![x.to_vec(); m]
        }
        None => (0..m)
            .map(|i| prior.sample(&mut stream.child(0).child(i as u64).rng()))
            .collect(),
    };
    let mut mupf_belief = match x0 {
        Some(x) => GaussianBelief::point(DVector::from_vec(prior.to_unconstrained(x))),
        None => {
            let (mean, var) = prior.unconstrained_moments();
            let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
            GaussianBelief::new(
                DVector::from_vec(mean),
                crate::linalg::CholeskyFactor::from_sd(&sd),
            )?
        }
    };

    let mut system = ParticleSystem {
        x: x0s.clone(),
        u: Vec::new(),
        log_omega: vec![0.0; m],
        log_w: vec![0.0; m],
        ancestors: (0..m).collect(),
    };
    let mut log_w_norm = vec![-(m as f64).ln(); m];
    let mut estimate = LikelihoodEstimate {
        log_likelihood: 0.0,
        increments: Vec::with_capacity(y.len()),
        collapsed: false,
        collapse_time: None,
    };
    let mut history = cfg.keep_history.then(|| Vec::with_capacity(y.len()));
    let mut ess = Vec::with_capacity(y.len());
    let mut fallbacks = 0;

    let obs_logp = |yt: &[f64], x: &[f64]| -> f64 {
        match model.obs_log_density(yt, x, theta) {
            Ok(v) if !v.is_nan() => v,
            _ => f64::NEG_INFINITY,
        }
    };
    let pilot = |u: &[f64], x: &[f64], yt: &[f64]| -> f64 {
        match model.transition(u, x, theta) {
            Ok(xn) => obs_logp(yt, &xn),
            Err(_) => f64::NEG_INFINITY,
        }
    };

    for (k, yt) in y.iter().enumerate() {
        let t = k + 1;
        let step = stream.child(t as u64);

        // Look-ahead.
        let mut shared: Option<(GaussianBelief, f64, Vec<f64>)> = None;
        let mut per_particle: Option<Vec<(GaussianBelief, f64, f64)>> = None;
        match cfg.scheme {
            ProposalScheme::Mupf0 | ProposalScheme::Mupf1 => {
                let la = mupf_lookahead(model, &mupf_belief, theta, yt, &cfg.ut)?;
                fallbacks += la.fallback as usize;
                mupf_belief = la.x_belief;
                let ld = la.u_proposal.chol.log_det();
                shared = Some((la.u_proposal, ld, la.mu_hat));
            }
            ProposalScheme::Cupf0 | ProposalScheme::Cupf1 => {
                let conds = system
                    .x
                    .par_iter()
                    .map(|x| cupf_conditional(model, x, theta, yt, &cfg.ut))
                    .collect::<Result<Vec<_>>>()?;
                fallbacks += conds.iter().filter(|c| c.fallback).count();
                per_particle = Some(
                    conds
                        .into_iter()
                        .map(|c| {
                            let ld = c.u_proposal.chol.log_det();
                            (c.u_proposal, ld, c.log_pred_y)
                        })
                        .collect(),
                );
            }
            _ => {}
        }

        // Stage one.
        let log_g: Vec<f64> = match cfg.scheme {
            ProposalScheme::Pf0 | ProposalScheme::Mupf0 | ProposalScheme::Cupf0 => vec![0.0; m],
            ProposalScheme::Pf1 => {
                let zero = vec![0.0; d.n_u];
                system.x.par_iter().map(|x| pilot(&zero, x, yt)).collect()
            }
            ProposalScheme::Mupf1 => {
                let mu_hat = &shared.as_ref().expect("marginal look-ahead computed").2;
                system.x.par_iter().map(|x| pilot(mu_hat, x, yt)).collect()
            }
            ProposalScheme::Cupf1 => per_particle
                .as_ref()
                .expect("conditional look-ahead computed")
                .iter()
                .map(|c| if c.2.is_nan() { f64::NEG_INFINITY } else { c.2 })
                .collect(),
        };
        let log_omega: Vec<f64> = log_w_norm.iter().zip(&log_g).map(|(a, b)| a + b).collect();
        let ancestors = match resample(&log_omega, m, cfg.resample, &step.child(0)) {
            Ok(a) => a,
            Err(Error::FilterCollapse { .. }) => {
                collapse(&mut estimate, t);
                break;
            }
            Err(e) => return Err(e),
        };

        // Stage two.
        let prev = &system.x;
        let draws: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..m)
            .into_par_iter()
            .map(|i| {
                let a = ancestors[i];
                let xi = DVector::from_vec(draw_stream(&step.child(1).child(i as u64), d.n_u));
                let (u, log_ups) = match (&shared, &per_particle) {
                    (Some((b, ld, _)), _) => {
                        let u = &b.mean + b.chol.mul_vec(&xi);
                        let lu = log_upsilon(*ld, &xi, &u);
                        (u, lu)
                    }
                    (None, Some(pp)) => {
                        let (b, ld, _) = &pp[a];
                        let u = &b.mean + b.chol.mul_vec(&xi);
                        let lu = log_upsilon(*ld, &xi, &u);
                        (u, lu)
                    }
                    (None, None) => (xi, 0.0),
                };
                let u: Vec<f64> = u.iter().copied().collect();
                match model.transition(&u, &prev[a], theta) {
                    Ok(x) => {
                        let lw = obs_logp(yt, &x) + log_ups - log_g[a];
                        let lw = if lw.is_nan() { f64::NEG_INFINITY } else { lw };
                        (u, x, lw)
                    }
                    Err(_) => (u, vec![f64::NAN; d.n_x], f64::NEG_INFINITY),
                }
            })
            .collect();
        let mut xs = Vec::with_capacity(m);
        let mut us = Vec::with_capacity(m);
        let mut log_w = Vec::with_capacity(m);
        for (u, x, lw) in draws {
            us.push(u);
            xs.push(x);
            log_w.push(lw);
        }

        let inc = likelihood_increment(&log_w, &log_omega);
        system = ParticleSystem {
            x: xs,
            u: us,
            log_omega,
            log_w,
            ancestors,
        };
        if let Some(h) = history.as_mut() {
            h.push(system.clone());
        }
        if inc == f64::NEG_INFINITY || inc.is_nan() {
            estimate.increments.push(f64::NEG_INFINITY);
            collapse(&mut estimate, t);
            break;
        }
        estimate.increments.push(inc);
        estimate.log_likelihood += inc;
        let total = log_sum_exp(&system.log_w);
        log_w_norm = system.log_w.iter().map(|v| v - total).collect();
        ess.push(effective_sample_size(
            &log_w_norm.iter().map(|v| v.exp()).collect::<Vec<_>>(),
        ));
    }

    Ok(FilterRun {
        estimate,
        system,
        x0: x0s,
        history,
        ess,
        fallbacks,
    })
}

fn collapse(estimate: &mut LikelihoodEstimate, t: usize) {
    estimate.collapsed = true;
    estimate.collapse_time = Some(t);
    estimate.log_likelihood = f64::NEG_INFINITY;
}

/// A path drawn from a completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Final-time particle the path ends in.
    pub index: usize,
    pub x0: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
}

/// Draws a final particle from the normalized final weights and traces its
/// ancestry back to time 0.
pub fn extract_trajectory(run: &FilterRun, stream: &RngStream) -> Result<Trajectory> {
    let history = run
        .history
        .as_ref()
        .ok_or_else(|| Error::Config("trajectory extraction needs a run with history".into()))?;
    let t_len = history.len();
    if run.estimate.collapsed {
        return Err(Error::FilterCollapse {
            time: run.estimate.collapse_time.unwrap_or(t_len),
        });
    }
    if t_len == 0 {
        let i = ((draw_uniform(stream, 1)[0] * run.x0.len() as f64) as usize).min(run.x0.len() - 1);
        return Ok(Trajectory {
            index: i,
            x0: run.x0[i].clone(),
            u: Vec::new(),
            x: Vec::new(),
        });
    }
    let last = &history[t_len - 1];
    let index = resample(&last.log_w, 1, ResampleMethod::Multinomial, stream)?[0];
    let mut u = vec![Vec::new(); t_len];
    let mut x = vec![Vec::new(); t_len];
    let mut b = index;
    for s in (0..t_len).rev() {
        u[s] = history[s].u[b].clone();
        x[s] = history[s].x[b].clone();
        b = history[s].ancestors[b];
    }
    Ok(Trajectory {
        index,
        x0: run.x0[b].clone(),
        u,
        x,
    })
}
