//! Forward simulation of synthetic data sets and their on-disk form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{Integrator, StateSpaceModel};
use crate::rng::{draw_stream, RngStream};

/// Everything needed to regenerate a data set, plus the hidden trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub model: String,
    pub seed: u64,
    pub t: usize,
    pub theta_names: Vec<String>,
    pub theta: Vec<f64>,
    pub state_names: Vec<String>,
    pub x0: Vec<f64>,
    pub noise_names: Vec<String>,
    /// Multiplies the observation noise; 0 gives the deterministic map.
    pub obs_noise_scale: f64,
    pub integrator: Option<IntegratorRecord>,
    pub noise: Vec<Vec<f64>>,
    pub trajectory: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorRecord {
    pub method: String,
    pub substep_days: f64,
}

impl From<Integrator> for IntegratorRecord {
    fn from(i: Integrator) -> Self {
        Self {
            method: i.method.to_string(),
            substep_days: i.substep_days,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    /// `y[t - 1]` is the observation at day `t`.
    pub y: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub data: Dataset,
    pub truth: GroundTruth,
}

/// Simulates `t` days from `x0` at `theta`.
///
/// Process noise for day `s` comes from stream `[0, s]` and observation noise
/// from `[1, s]` under `seed`.
pub fn simulate_dataset<M: StateSpaceModel + ?Sized>(
    model: &M,
    theta: &[f64],
    x0: &[f64],
    t: usize,
    seed: u64,
    obs_noise_scale: f64,
) -> Result<Simulation> {
    let dims = model.dims();
    check_len("parameters", dims.n_theta, theta.len())?;
    check_len("initial state", dims.n_x, x0.len())?;
    let root = RngStream::root(seed);
    let link = model.observation_link();
    let sd = model.observation_sd(theta);
    let mut x = x0.to_vec();
    let mut noise = Vec::with_capacity(t);
    let mut trajectory = Vec::with_capacity(t);
    let mut y = Vec::with_capacity(t);
    for s in 1..=t as u64 {
        let u = draw_stream(&root.child(0).child(s), dims.n_u);
        x = model.transition(&u, &x, theta)?;
        let mean = model.observation_mean(&x, theta)?;
        let e = draw_stream(&root.child(1).child(s), dims.n_y);
        let obs: Vec<f64> = (0..dims.n_y)
            .map(|i| link.inverse(mean[i] + obs_noise_scale * sd[i] * e[i]))
            .collect();
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(Error::IntegrationFailure);
        }
        noise.push(u);
        trajectory.push(x.clone());
        y.push(obs);
    }
    let state_names = model.x0_prior().names.clone();
    Ok(Simulation {
        data: Dataset {
            names: model.observation_names(),
            y,
        },
        truth: GroundTruth {
            model: model.name().to_string(),
            seed,
            t,
            theta_names: model.theta_prior().names.clone(),
            theta: theta.to_vec(),
            state_names,
            x0: x0.to_vec(),
            noise_names: model.noise_names(),
            obs_noise_scale,
            integrator: model.integrator().map(Into::into),
            noise,
            trajectory,
        },
    })
}

/// Writes `t, y_1, ..., y_n` with one row per day. Missing values are empty.
pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(data.names.iter().cloned());
    w.write_record(&header)?;
    for (i, row) in data.y.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(row.iter().map(|v| {
            if v.is_finite() {
                format_f64(*v)
            } else {
                String::new()
            }
        }));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.get(0) != Some("t") {
        return Err(Error::Config(format!(
            "{}: first column must be `t`",
            path.display()
        )));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut y = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(1)
            .map(|s| {
                let s = s.trim();
                if s.is_empty() || s.eq_ignore_ascii_case("nan") {
                    Ok(f64::NAN)
                } else {
                    s.parse::<f64>().map_err(|e| Error::Parse {
                        line: i + 2,
                        msg: format!("`{s}`: {e}"),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        check_len("data row", names.len(), row.len())?;
        y.push(row);
    }
    Ok(Dataset { names, y })
}

pub fn write_truth_json(path: &Path, truth: &GroundTruth) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(truth)? + "\n")?;
    Ok(())
}

pub fn read_truth_json(path: &Path) -> Result<GroundTruth> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Shortest representation that round-trips.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}
