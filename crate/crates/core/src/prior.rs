//! Independent univariate priors and their unconstrained coordinates.
//!
//! Each component maps to an unconstrained coordinate: log for log-normal,
//! identity otherwise. Gaussian approximations (UKF beliefs) and random-walk
//! proposals live in those coordinates.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatrsNormal};

use crate::error::{check_len, Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Univariate {
    Uniform {
        lower: f64,
        upper: f64,
    },
    Normal {
        mean: f64,
        sd: f64,
    },
    /// `ln X ~ N(meanlog, sdlog)`.
    LogNormal {
        meanlog: f64,
        sdlog: f64,
    },
}

pub fn normal_log_density(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

impl Univariate {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Univariate::Uniform { lower, upper } => lower + (upper - lower) * rng.random::<f64>(),
            Univariate::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            Univariate::LogNormal { meanlog, sdlog } => {
                (meanlog + sdlog * rng.sample::<f64, _>(StandardNormal)).exp()
            }
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            Univariate::Uniform { lower, upper } => {
                if (lower..=upper).contains(&x) {
                    -(upper - lower).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Univariate::Normal { mean, sd } => normal_log_density(x, mean, sd),
            Univariate::LogNormal { meanlog, sdlog } => {
                if x > 0.0 {
                    normal_log_density(x.ln(), meanlog, sdlog) - x.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Univariate::Uniform { lower, upper } => 0.5 * (lower + upper),
            Univariate::Normal { mean, .. } => mean,
            Univariate::LogNormal { meanlog, sdlog } => (meanlog + 0.5 * sdlog * sdlog).exp(),
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let std = StatrsNormal::new(0.0, 1.0).expect("standard normal");
        match *self {
            Univariate::Uniform { lower, upper } => lower + (upper - lower) * p,
            Univariate::Normal { mean, sd } => mean + sd * std.inverse_cdf(p),
            Univariate::LogNormal { meanlog, sdlog } => {
                (meanlog + sdlog * std.inverse_cdf(p)).exp()
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let std = StatrsNormal::new(0.0, 1.0).expect("standard normal");
        match *self {
            Univariate::Uniform { lower, upper } => ((x - lower) / (upper - lower)).clamp(0.0, 1.0),
            Univariate::Normal { mean, sd } => std.cdf((x - mean) / sd),
            Univariate::LogNormal { meanlog, sdlog } => {
                if x <= 0.0 {
                    0.0
                } else {
                    std.cdf((x.ln() - meanlog) / sdlog)
                }
            }
        }
    }

    pub fn is_log(&self) -> bool {
        matches!(self, Univariate::LogNormal { .. })
    }

    pub fn to_unconstrained(&self, x: f64) -> f64 {
        if self.is_log() {
            x.ln()
        } else {
            x
        }
    }

    pub fn from_unconstrained(&self, s: f64) -> f64 {
        if self.is_log() {
            s.exp()
        } else {
            s
        }
    }

    /// Density of the unconstrained coordinate, Jacobian included.
    pub fn log_density_unconstrained(&self, s: f64) -> f64 {
        match *self {
            Univariate::LogNormal { meanlog, sdlog } => normal_log_density(s, meanlog, sdlog),
            _ => self.log_density(s),
        }
    }

    /// Mean and variance in unconstrained coordinates.
    pub fn unconstrained_moments(&self) -> (f64, f64) {
        match *self {
            Univariate::Uniform { lower, upper } => {
                (0.5 * (lower + upper), (upper - lower).powi(2) / 12.0)
            }
            Univariate::Normal { mean, sd } => (mean, sd * sd),
            Univariate::LogNormal { meanlog, sdlog } => (meanlog, sdlog * sdlog),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split_whitespace().collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| Error::Config(format!("prior `{text}` is missing an argument")))?
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("prior `{text}`: {e}")))
        };
        let prior = match parts.first().copied() {
            Some("uniform") => Univariate::Uniform {
                lower: num(1)?,
                upper: num(2)?,
            },
            Some("normal") => Univariate::Normal {
                mean: num(1)?,
                sd: num(2)?,
            },
            // Given by median and log-scale sd.
            Some("lognormal") => Univariate::LogNormal {
                meanlog: num(1)?.ln(),
                sdlog: num(2)?,
            },
            _ => return Err(Error::Config(format!("unknown prior `{text}`"))),
        };
        if parts.len() != 3 {
            return Err(Error::Config(format!("prior `{text}` takes two arguments")));
        }
        Ok(prior)
    }
}

/// Product of independent named components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub names: Vec<String>,
    pub components: Vec<Univariate>,
}

impl Prior {
    pub fn new(names: Vec<String>, components: Vec<Univariate>) -> Self {
        assert_eq!(
            names.len(),
            components.len(),
            "one name per prior component"
        );
        Self { names, components }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.components.iter().map(|c| c.sample(rng)).collect()
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_len("prior point", self.len(), x.len())?;
        Ok(self
            .components
            .iter()
            .zip(x)
            .map(|(c, &v)| c.log_density(v))
            .sum())
    }

    pub fn log_density_unconstrained(&self, s: &[f64]) -> Result<f64> {
        check_len("prior point", self.len(), s.len())?;
        Ok(self
            .components
            .iter()
            .zip(s)
            .map(|(c, &v)| c.log_density_unconstrained(v))
            .sum())
    }

    pub fn to_unconstrained(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .zip(x)
            .map(|(c, &v)| c.to_unconstrained(v))
            .collect()
    }

    pub fn from_unconstrained(&self, s: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .zip(s)
            .map(|(c, &v)| c.from_unconstrained(v))
            .collect()
    }

    pub fn unconstrained_moments(&self) -> (Vec<f64>, Vec<f64>) {
        self.components
            .iter()
            .map(|c| c.unconstrained_moments())
            .unzip()
    }

    pub fn medians(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.quantile(0.5)).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Concatenation, used for the chain coordinates `(x0, θ)`.
    pub fn concat(&self, other: &Prior) -> Prior {
        let mut names = self.names.clone();
        names.extend(other.names.iter().cloned());
        let mut components = self.components.clone();
        components.extend(other.components.iter().copied());
        Prior { names, components }
    }
}
