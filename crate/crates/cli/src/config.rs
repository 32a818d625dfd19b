use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use ssm_core::apf::{count_propagations, ProposalScheme, ResampleMethod};
use ssm_core::pmmh::TuneConfig;
use ssm_core::ukf::UtParams;
use ssm_core::{Dims, Factorization};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Pz,
    Npzd,
    LinearGaussianTest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Simulate,
    Filter,
    Pmmh,
    Car,
    Rhat,
}

impl CommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::Simulate => "simulate",
            CommandKind::Filter => "filter",
            CommandKind::Pmmh => "pmmh",
            CommandKind::Car => "car",
            CommandKind::Rhat => "rhat",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// Every scheme runs with `m` particles.
    #[default]
    ParticleMatched,
    /// `m` particles of `reference_scheme` set a per-step propagation budget.
    ComputeMatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budget {
    pub mode: BudgetMode,
    pub reference_scheme: ProposalScheme,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            mode: BudgetMode::ParticleMatched,
            reference_scheme: ProposalScheme::Pf0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PointsSpec {
    /// Cell centres of a `per_axis`^d grid in prior quantiles.
    Grid {
        per_axis: usize,
    },
    PriorDraws {
        count: usize,
    },
}

impl Default for PointsSpec {
    fn default() -> Self {
        PointsSpec::Grid { per_axis: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodKind {
    #[default]
    Particle,
    /// Kalman filter; linear-Gaussian model only.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    /// Smoothed joint UKF belief.
    #[default]
    Ukf,
    /// Moment-matched prior.
    Prior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalSpec {
    /// Multiplies the start belief covariance. Tuned by pilot runs when absent.
    pub scale: Option<f64>,
    pub tune: TuneConfig,
    pub start: StartKind,
}

impl Default for ProposalSpec {
    fn default() -> Self {
        Self {
            scale: None,
            tune: TuneConfig::default(),
            start: StartKind::Ukf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RhatSpec {
    /// Chain CSV files; when empty, every `chain_*.csv` in `dir`.
    pub chains: Vec<PathBuf>,
    pub dir: Option<PathBuf>,
    /// Draws between successive evaluations.
    pub interval: usize,
}

impl Default for RhatSpec {
    fn default() -> Self {
        Self {
            chains: Vec::new(),
            dir: None,
            interval: 100,
        }
    }
}

/// One declarative run. Every field has a default; flags override fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub command: Option<CommandKind>,
    pub scheme: ProposalScheme,
    pub m: usize,
    pub budget: Budget,
    pub t: usize,
    pub n_steps: usize,
    pub chains: usize,
    pub l: usize,
    pub seed: u64,
    pub theta: Option<Vec<f64>>,
    pub x0: Option<Vec<f64>>,
    pub obs_noise_scale: f64,
    pub data: Option<PathBuf>,
    pub factorization: Option<Factorization>,
    pub points: PointsSpec,
    pub proposal: ProposalSpec,
    pub likelihood: LikelihoodKind,
    pub resample: ResampleMethod,
    pub ut: UtParams,
    /// Model constants by name.
    pub constants: BTreeMap<String, serde_json::Value>,
    /// Prior overrides: parameter names, or `x0.<state>` for initial states.
    pub priors: BTreeMap<String, String>,
    pub rhat: RhatSpec,
    /// Write per-time increments and ESS for every filter replicate.
    pub dump_increments: bool,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Pz,
            command: None,
            scheme: ProposalScheme::Pf0,
            m: 64,
            budget: Budget::default(),
            t: 100,
            n_steps: 5000,
            chains: 4,
            l: 50,
            seed: 1,
            theta: None,
            x0: None,
            obs_noise_scale: 1.0,
            data: None,
            factorization: None,
            points: PointsSpec::default(),
            proposal: ProposalSpec::default(),
            likelihood: LikelihoodKind::Particle,
            resample: ResampleMethod::Multinomial,
            ut: UtParams::default(),
            constants: BTreeMap::new(),
            priors: BTreeMap::new(),
            rhat: RhatSpec::default(),
            dump_increments: false,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Reads a config file, or the `config` member of a run manifest.
    /// Relative paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let value = match value.get("config") {
            Some(inner) if value.get("manifest_version").is_some() => inner.clone(),
            _ => value,
        };
        let mut cfg: RunConfig = serde_json::from_value(value)
            .with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = self.data.as_mut() {
            fix(d);
        }
        if let Some(d) = self.rhat.dir.as_mut() {
            fix(d);
        }
        for c in &mut self.rhat.chains {
            fix(c);
        }
        fix(&mut self.out);
    }

    /// Input paths made absolute so a manifest replays from any directory.
    pub fn absolutize_inputs(&mut self) -> Result<()> {
        let abs = |p: &Path| -> Result<PathBuf> {
            std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
        };
        if let Some(d) = &self.data {
            self.data = Some(abs(d)?);
        }
        if let Some(d) = &self.rhat.dir {
            self.rhat.dir = Some(abs(d)?);
        }
        self.rhat.chains = self
            .rhat
            .chains
            .iter()
            .map(|c| abs(c))
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn data_path(&self) -> Result<&Path> {
        match &self.data {
            Some(p) => Ok(p),
            None => bail!("this command needs a `data` file"),
        }
    }
}

/// Particle count for `scheme` under the budget. Compute-matched counts are
/// the largest `M` whose per-step propagations do not exceed those of
/// `reference_m` particles of the reference scheme.
pub fn resolve_particles(
    scheme: ProposalScheme,
    reference_m: usize,
    budget: &Budget,
    dims: Dims,
) -> Result<usize> {
    if reference_m == 0 {
        bail!("particle count must be positive");
    }
    match budget.mode {
        BudgetMode::ParticleMatched => Ok(reference_m),
        BudgetMode::ComputeMatched => {
            let target = count_propagations(budget.reference_scheme, reference_m as u64, dims, 1);
            let cost = |m: u64| count_propagations(scheme, m, dims, 1);
            if cost(1) > target {
                bail!("budget of {target} propagations per step is below one {scheme} particle");
            }
            let (mut lo, mut hi) = (1u64, target.max(1));
            while lo < hi {
                let mid = lo + (hi - lo).div_ceil(2);
                if cost(mid) <= target {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            Ok(lo as usize)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ssm_core::models::{NpzdModel, PzModel};
    use ssm_core::StateSpaceModel;

    fn matched() -> Budget {
        Budget {
            mode: BudgetMode::ComputeMatched,
            reference_scheme: ProposalScheme::Pf0,
        }
    }

    #[test]
    fn compute_matched_counts() {
        let pz = PzModel::default().dims();
        let b = matched();
        assert_eq!(
            resolve_particles(ProposalScheme::Pf1, 3072, &b, pz).unwrap(),
            1536
        );
        assert_eq!(
            resolve_particles(ProposalScheme::Pf0, 3072, &b, pz).unwrap(),
            3072
        );
        assert_eq!(
            resolve_particles(ProposalScheme::Mupf0, 3072, &b, pz).unwrap(),
            3061
        );
        assert_eq!(
            resolve_particles(ProposalScheme::Mupf1, 3072, &b, pz).unwrap(),
            1530
        );
        assert_eq!(
            resolve_particles(ProposalScheme::Cupf0, 3072, &b, pz).unwrap(),
            512
        );
        let npzd = NpzdModel::default().dims();
        // 1 + 2(9 + 2) + 1 = 24 propagations per CUPF particle.
        assert_eq!(
            resolve_particles(ProposalScheme::Cupf1, 3072, &b, npzd).unwrap(),
            128
        );
        assert!(resolve_particles(ProposalScheme::Cupf0, 4, &b, npzd).is_err());
        assert_eq!(
            resolve_particles(ProposalScheme::Cupf0, 5, &Budget::default(), npzd).unwrap(),
            5
        );
    }

    #[test]
    fn config_defaults_and_unknown_keys() {
        let cfg: RunConfig = serde_json::from_str(r#"{"model": "npzd", "scheme": "MUPF1", "points": {"kind": "prior_draws", "count": 3}}"#).unwrap();
        assert_eq!(cfg.model, ModelKind::Npzd);
        assert_eq!(cfg.scheme, ProposalScheme::Mupf1);
        assert_eq!(cfg.points, PointsSpec::PriorDraws { count: 3 });
        assert_eq!(cfg.m, 64);
        assert!(serde_json::from_str::<RunConfig>(r#"{"particles": 3}"#).is_err());
    }

    #[test]
    fn loads_manifest_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            data: Some(PathBuf::from("data.csv")),
            ..RunConfig::default()
        };
        let manifest = serde_json::json!({"manifest_version": 1, "config": cfg});
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, manifest.to_string()).unwrap();
        let loaded = RunConfig::load(&path).unwrap();
        assert_eq!(loaded.data.unwrap(), dir.path().join("data.csv"));
    }
}
