use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::car::{car_sorted, CarEstimate};
use crate::error::{Error, Result};
use crate::models::simulate::format_f64;
use crate::pmmh::LikelihoodEstimator;
use crate::prior::Prior;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarSurvey {
    pub names: Vec<String>,
    pub l: usize,
    pub seed: u64,
    pub points: Vec<CarEstimate>,
}

/// Cell centres of a regular grid over the prior: coordinate `j` of cell
/// `i` is the prior quantile at `(i + 1/2) / per_axis`. The first
/// coordinate varies slowest.
pub fn grid_points(prior: &Prior, per_axis: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = prior
        .components
        .iter()
        .map(|c| {
            (0..per_axis)
                .map(|i| c.quantile((i as f64 + 0.5) / per_axis as f64))
                .collect()
        })
        .collect();
    let total = per_axis.pow(axes.len() as u32);
    (0..total)
        .map(|mut k| {
            let mut p = vec![0.0; axes.len()];
            for j in (0..axes.len()).rev() {
                p[j] = axes[j][k % per_axis];
                k /= per_axis;
            }
            p
        })
        .collect()
}

/// Independent prior draws; draw `i` uses `stream.child(i)`.
pub fn prior_draws(prior: &Prior, count: usize, stream: &RngStream) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| prior.sample(&mut stream.child(i as u64).rng()))
        .collect()
}

/// `l` independent likelihood estimates at each point, with replicate `r`
/// of point `p` on stream `(seed, [p, r])`, and the CAR of each point.
pub fn car_survey(
    estimator: &dyn LikelihoodEstimator,
    points: &[Vec<f64>],
    l: usize,
    seed: u64,
) -> Result<CarSurvey> {
    if l == 0 {
        return Err(Error::Config(
            "survey needs at least one replicate per point".into(),
        ));
    }
    let prior = estimator.chain_prior();
    for p in points {
        if !prior.log_density(p)?.is_finite() {
            return Err(Error::Config(format!(
                "survey point {p:?} is outside the prior support"
            )));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..l).map(move |r| (p, r)))
        .collect();
    let values: Vec<f64> = jobs
        .par_iter()
        .map(|&(p, r)| estimator.estimate(&points[p], &RngStream::new(seed, &[p as u64, r as u64])))
        .collect::<Result<_>>()?;
    let estimates = points
        .iter()
        .zip(values.chunks(l))
        .map(|(p, v)| {
            let collapsed_count = v
                .iter()
                .filter(|x| **x == f64::NEG_INFINITY || x.is_nan())
                .count();
            let clean: Vec<f64> = v
                .iter()
                .map(|x| if x.is_nan() { f64::NEG_INFINITY } else { *x })
                .collect();
            let alpha = match car_sorted(&clean) {
                Ok(a) => Some(a),
                Err(Error::UndefinedCar) => None,
                Err(e) => return Err(e),
            };
            Ok(CarEstimate {
                location: p.clone(),
                log_likelihoods: clean,
                alpha,
                collapsed_count,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CarSurvey {
        names: prior.names,
        l,
        seed,
        points: estimates,
    })
}

impl CarSurvey {
    /// Writes `param_1..param_d, alpha, L, collapsed_count`; an undefined
    /// CAR is written as an empty field.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self
            .points
            .first()
            .map_or(self.names.len(), |p| p.location.len());
        let mut header: Vec<String> = (1..=d).map(|j| format!("param_{j}")).collect();
        header.extend(["alpha", "L", "collapsed_count"].map(String::from));
        w.write_record(&header)?;
        for p in &self.points {
            let mut row: Vec<String> = p.location.iter().map(|v| format_f64(*v)).collect();
            row.push(p.alpha.map(format_f64).unwrap_or_default());
            row.push(p.l().to_string());
            row.push(p.collapsed_count.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the raw replicates, one row per point and replicate.
    pub fn write_replicates_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["point", "replicate", "log_lik"])?;
        for (i, p) in self.points.iter().enumerate() {
            for (r, v) in p.log_likelihoods.iter().enumerate() {
                w.write_record([i.to_string(), r.to_string(), format_f64(*v)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
