use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Context, Result};
use ssm_core::models::npzd::{default_kv, default_prior_kv, params_from_kv, x0_from_kv};
use ssm_core::models::pz::PzConstants;
use ssm_core::models::{LinearGaussianModel, NpzdModel, PzModel};
use ssm_core::{Prior, StateSpaceModel, Univariate};

use crate::config::{ModelKind, RunConfig};

/// A concrete model chosen by the config.
pub enum AnyModel {
    Pz(PzModel),
    Npzd(Box<NpzdModel>),
    Linear(LinearGaussianModel),
}

impl AnyModel {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        match cfg.model {
            ModelKind::Pz => {
                let mut value = serde_json::to_value(PzConstants::default())?;
                let obj = value
                    .as_object_mut()
                    .expect("constants serialize to an object");
                for (k, v) in &cfg.constants {
                    if !obj.contains_key(k) {
                        bail!("unknown PZ constant `{k}`");
                    }
                    obj.insert(k.clone(), v.clone());
                }
                let constants: PzConstants =
                    serde_json::from_value(value).context("PZ constants")?;
                let base = PzModel::new(constants);
                let (theta, x0) = override_priors(&base, &cfg.priors)?;
                Ok(AnyModel::Pz(base.with_priors(theta, x0)))
            }
            ModelKind::Npzd => {
                let mut defaults = default_kv();
                for (k, v) in &cfg.constants {
                    if defaults.get(k).is_none() {
                        bail!("unknown NPZD constant `{k}`");
                    }
                    defaults.set(k, value_text(v)?);
                }
                let mut priors = default_prior_kv();
                for (k, v) in &cfg.priors {
                    if priors.get(k).is_none() {
                        bail!("unknown NPZD prior `{k}`");
                    }
                    priors.set(k, v.clone());
                }
                Ok(AnyModel::Npzd(Box::new(NpzdModel::from_kv(
                    &defaults, &priors,
                )?)))
            }
            ModelKind::LinearGaussianTest => {
                let mut abc = BTreeMap::from([("a", 0.9), ("q", 1.0), ("r", 1.0)]);
                for (k, v) in &cfg.constants {
                    let slot = abc
                        .get_mut(k.as_str())
                        .ok_or_else(|| anyhow!("unknown linear model constant `{k}`"))?;
                    *slot = v
                        .as_f64()
                        .ok_or_else(|| anyhow!("constant `{k}` must be a number"))?;
                }
                let base = LinearGaussianModel::scalar(abc["a"], abc["q"], abc["r"]);
                let (theta, x0) = override_priors(&base, &cfg.priors)?;
                let mut m = base.with_priors(theta, x0);
                if let Some(f) = cfg.factorization {
                    m = m.with_factorization(f);
                }
                Ok(AnyModel::Linear(m))
            }
        }
    }

    pub fn as_dyn(&self) -> &dyn StateSpaceModel {
        match self {
            AnyModel::Pz(m) => m,
            AnyModel::Npzd(m) => m.as_ref(),
            AnyModel::Linear(m) => m,
        }
    }

    /// Parameters and initial state used when the config gives none.
    pub fn default_truth(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            AnyModel::Pz(_) => Ok((vec![0.3, 0.1], vec![2.0, 2.0, 0.3])),
            AnyModel::Npzd(_) => {
                let kv = default_kv();
                Ok((params_from_kv(&kv)?.to_vec(), x0_from_kv(&kv)?.to_vec()))
            }
            AnyModel::Linear(_) => Ok((vec![0.5], vec![0.0])),
        }
    }
}

fn value_text(v: &serde_json::Value) -> Result<String> {
    match v {
        serde_json::Value::Number(n) => Ok(n.to_string()),
        serde_json::Value::String(s) => Ok(s.clone()),
        other => bail!("constant values must be numbers or strings, got {other}"),
    }
}

fn override_priors<M: StateSpaceModel>(
    model: &M,
    map: &BTreeMap<String, String>,
) -> Result<(Prior, Prior)> {
    let mut theta = model.theta_prior().clone();
    let mut x0 = model.x0_prior().clone();
    for (k, v) in map {
        let prior = Univariate::parse(v)?;
        let slot = match k.strip_prefix("x0.") {
            Some(state) => x0.index_of(state).map(|i| &mut x0.components[i]),
            None => theta.index_of(k).map(|i| &mut theta.components[i]),
        };
        *slot.ok_or_else(|| anyhow!("unknown prior `{k}`"))? = prior;
    }
    Ok((theta, x0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"constants": {"obs_sd": 0.5}, "priors": {"mu": "uniform 0 2", "x0.P": "lognormal 3 0.1"}}"#,
        )
        .unwrap();
        let m = AnyModel::build(&cfg).unwrap();
        let AnyModel::Pz(pz) = &m else { panic!() };
        assert_eq!(pz.constants.obs_sd, 0.5);
        assert_eq!(
            pz.theta_prior().components[0],
            Univariate::Uniform {
                lower: 0.0,
                upper: 2.0
            }
        );
        assert!((pz.x0_prior().components[0].quantile(0.5) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_names_rejected() {
        for text in [
            r#"{"constants": {"nope": 1}}"#,
            r#"{"priors": {"nope": "normal 0 1"}}"#,
            r#"{"model": "npzd", "constants": {"nope": 1}}"#,
            r#"{"model": "linear_gaussian_test", "constants": {"b": 1}}"#,
        ] {
            let cfg: RunConfig = serde_json::from_str(text).unwrap();
            assert!(AnyModel::build(&cfg).is_err(), "{text}");
        }
    }

    #[test]
    fn npzd_constants_override() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"model": "npzd", "constants": {"kappa": 0}}"#).unwrap();
        let AnyModel::Npzd(m) = AnyModel::build(&cfg).unwrap() else {
            panic!()
        };
        assert_eq!(m.constants.kappa, 0.0);
    }
}
