use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chain::{run_chain_on, ChainConfig};
use super::estimator::LikelihoodEstimator;
use crate::error::Result;
use crate::rng::RngStream;
use crate::ukf::GaussianBelief;

/// Stream label separating pilot chains from main chains.
const PILOT_LABEL: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    pub pilot_steps: usize,
    pub target: f64,
    /// Half-width of the accepted band around `target`.
    pub band: f64,
    pub halvings: u32,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            pilot_steps: 500,
            target: 0.23,
            band: 0.10,
            halvings: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub scale: f64,
    /// `(scale, pilot acceptance)` for every pilot run.
    pub pilots: Vec<(f64, f64)>,
    pub in_band: bool,
}

/// Rule-of-thumb starting scale `2.4² / d`.
pub fn initial_scale(d: usize) -> f64 {
    2.4 * 2.4 / d as f64
}

/// Runs pilots with proposal covariance `c · base_cov` for
/// `c = 2.4²/d · 2^{-k}`, `k = 0..=halvings`, and returns the first scale
/// whose acceptance lies within the band, else the smallest.
pub fn tune_scale(
    estimator: &dyn LikelihoodEstimator,
    base_cov: &DMatrix<f64>,
    start: &GaussianBelief,
    seed: u64,
    tune: &TuneConfig,
) -> Result<TuneResult> {
    let c0 = initial_scale(base_cov.nrows());
    let scales: Vec<f64> = (0..=tune.halvings)
        .map(|k| c0 / 2f64.powi(k as i32))
        .collect();
    let pilots: Vec<(f64, f64)> = scales
        .par_iter()
        .enumerate()
        .map(|(k, &c)| {
            let cfg = ChainConfig {
                n_steps: tune.pilot_steps,
                seed,
                proposal_cov: base_cov * c,
                start: start.clone(),
            };
            let chain = run_chain_on(
                &cfg,
                estimator,
                &RngStream::new(seed, &[PILOT_LABEL, k as u64]),
            )?;
            Ok((c, chain.stats.acceptance_rate))
        })
        .collect::<Result<_>>()?;
    let hit = pilots
        .iter()
        .find(|(_, a)| (a - tune.target).abs() <= tune.band);
    let (scale, in_band) = match hit {
        Some(&(c, _)) => (c, true),
        None => {
            let last = *scales.last().expect("at least one pilot scale");
            log::warn!(
                "no pilot acceptance within {} of {}; using scale {last}",
                tune.band,
                tune.target
            );
            (last, false)
        }
    };
    Ok(TuneResult {
        scale,
        pilots,
        in_band,
    })
}
