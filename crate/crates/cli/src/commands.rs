use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, ensure, Context, Result};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use ssm_core::apf::{count_propagations, run_filter, FilterConfig};
use ssm_core::diagnostics::{
    car_sorted, car_survey, grid_points, prior_draws, rank_export, rhat_multivariate,
    write_rank_export, Rhat,
};
use ssm_core::models::simulate::{
    format_f64, read_dataset_csv, write_dataset_csv, write_truth_json,
};
use ssm_core::models::simulate_dataset;
use ssm_core::pmmh::{
    chain_prior, read_chain_draws, run_chains, tune_scale, write_chain_csv, ChainConfig,
    KalmanLikelihood, LikelihoodEstimator, ParticleLikelihood, TuneResult,
};
use ssm_core::ukf::{joint_prior, joint_ukf_init, GaussianBelief};
use ssm_core::{Error, Factorization, RngStream, StateSpaceModel};

use crate::config::{
    resolve_particles, CommandKind, LikelihoodKind, PointsSpec, RunConfig, StartKind,
};
use crate::models::AnyModel;

pub const MANIFEST: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

/// Label for prior-draw survey points, away from the `[point, replicate]` streams.
const POINT_DRAW_LABEL: u64 = u64::MAX;

/// Largest survey grid accepted.
const MAX_GRID_POINTS: usize = 1 << 20;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub force: bool,
    /// Size of the worker pool; the global rayon pool when absent.
    pub workers: Option<usize>,
}

/// What a run wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub out: PathBuf,
    pub outputs: Vec<String>,
}

/// Runs `command` and writes its outputs and manifest under `cfg.out`.
pub fn execute(command: CommandKind, mut cfg: RunConfig, opts: &RunOptions) -> Result<RunReport> {
    if let Some(c) = cfg.command {
        ensure!(
            c == command,
            "config is for `{}`, not `{}`",
            c.as_str(),
            command.as_str()
        );
    }
    cfg.command = Some(command);
    cfg.absolutize_inputs()?;
    prepare_out_dir(&cfg.out, opts.force)?;
    let go = || -> Result<RunReport> {
        let mut w = Outputs::new(&cfg.out);
        let resolved = match command {
            CommandKind::Simulate => cmd_simulate(&cfg, &mut w)?,
            CommandKind::Filter => cmd_filter(&cfg, &mut w)?,
            CommandKind::Pmmh => cmd_pmmh(&cfg, &mut w)?,
            CommandKind::Car => cmd_car(&cfg, &mut w)?,
            CommandKind::Rhat => cmd_rhat(&cfg, &mut w)?,
        };
        let manifest = json!({
            "manifest_version": MANIFEST_VERSION,
            "tool": "ssm",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command.as_str(),
            "config": cfg,
            "resolved": resolved,
            "outputs": w.names,
        });
        w.json(MANIFEST, &manifest)?;
        Ok(RunReport {
            out: cfg.out.clone(),
            outputs: w.names,
        })
    };
    match opts.workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            pool.install(go)
        }
        None => go(),
    }
}

fn prepare_out_dir(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let occupied = std::fs::read_dir(out)
            .with_context(|| format!("reading {}", out.display()))?
            .next()
            .is_some();
        if occupied && !force {
            bail!(
                "output directory {} is not empty; pass --force to overwrite",
                out.display()
            );
        }
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Ok(())
}

struct Outputs {
    dir: PathBuf,
    names: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            names: Vec::new(),
        }
    }

    fn path(&mut self, name: &str) -> PathBuf {
        if name != MANIFEST {
            self.names.push(name.to_string());
        }
        self.dir.join(name)
    }

    fn file(&mut self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        Ok(BufWriter::new(
            File::create(&p).with_context(|| format!("creating {}", p.display()))?,
        ))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut f = self.file(name)?;
        serde_json::to_writer_pretty(&mut f, value)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    }
}

fn factorization(cfg: &RunConfig, model: &dyn StateSpaceModel) -> Factorization {
    cfg.factorization
        .unwrap_or_else(|| model.default_factorization())
}

fn theta_and_x0(cfg: &RunConfig, model: &AnyModel) -> Result<(Vec<f64>, Vec<f64>)> {
    let (theta, x0) = model.default_truth()?;
    Ok((
        cfg.theta.clone().unwrap_or(theta),
        cfg.x0.clone().unwrap_or(x0),
    ))
}

fn filter_config(cfg: &RunConfig, model: &dyn StateSpaceModel) -> Result<FilterConfig> {
    let m = resolve_particles(cfg.scheme, cfg.m, &cfg.budget, model.dims())?;
    Ok(FilterConfig {
        scheme: cfg.scheme,
        m,
        ut: cfg.ut,
        resample: cfg.resample,
        keep_history: false,
    })
}

fn load_data(cfg: &RunConfig, model: &dyn StateSpaceModel) -> Result<Vec<Vec<f64>>> {
    let path = cfg.data_path()?;
    let data = read_dataset_csv(path).with_context(|| format!("reading {}", path.display()))?;
    let n_y = model.dims().n_y;
    ensure!(
        data.names.len() == n_y,
        "{} has {} observation columns, model `{}` expects {n_y}",
        path.display(),
        data.names.len(),
        model.name()
    );
    Ok(data.y)
}

fn estimator<'a>(
    cfg: &RunConfig,
    model: &'a AnyModel,
    y: &'a [Vec<f64>],
    filter: FilterConfig,
) -> Result<Box<dyn LikelihoodEstimator + 'a>> {
    let f = factorization(cfg, model.as_dyn());
    match (cfg.likelihood, model) {
        (LikelihoodKind::Particle, _) => Ok(Box::new(ParticleLikelihood::new(
            model.as_dyn(),
            y,
            filter,
            f,
        ))),
        (LikelihoodKind::Exact, AnyModel::Linear(m)) => Ok(Box::new(KalmanLikelihood {
            model: m,
            y,
            factorization: f,
        })),
        (LikelihoodKind::Exact, _) => {
            bail!("exact likelihood is only available for linear_gaussian_test")
        }
    }
}

fn cmd_simulate(cfg: &RunConfig, w: &mut Outputs) -> Result<serde_json::Value> {
    let model = AnyModel::build(cfg)?;
    let (theta, x0) = theta_and_x0(cfg, &model)?;
    let sim = simulate_dataset(
        model.as_dyn(),
        &theta,
        &x0,
        cfg.t,
        cfg.seed,
        cfg.obs_noise_scale,
    )?;
    write_dataset_csv(&w.path("data.csv"), &sim.data)?;
    write_truth_json(&w.path("truth.json"), &sim.truth)?;
    Ok(json!({ "theta": theta, "x0": x0 }))
}

fn cmd_filter(cfg: &RunConfig, w: &mut Outputs) -> Result<serde_json::Value> {
    ensure!(cfg.l >= 1, "`l` must be at least 1");
    let model = AnyModel::build(cfg)?;
    let dm = model.as_dyn();
    let y = load_data(cfg, dm)?;
    let fcfg = filter_config(cfg, dm)?;
    let fact = factorization(cfg, dm);
    let (theta, default_x0) = theta_and_x0(cfg, &model)?;
    let x0 = match (fact, &cfg.x0) {
        (_, Some(x)) => Some(x.clone()),
        (Factorization::X0InChain, None) => Some(default_x0),
        (Factorization::X0InFilter, None) => None,
    };
    let exact = match &model {
        AnyModel::Linear(m) => Some(match &x0 {
            Some(x) => m.kalman_log_likelihood(
                &y,
                &nalgebra::DVector::from_column_slice(x),
                &DMatrix::zeros(x.len(), x.len()),
                &theta,
            )?,
            None => {
                let (m0, p0) = m.x0_moments();
                m.kalman_log_likelihood(&y, &m0, &p0, &theta)?
            }
        }),
        _ => None,
    };
    let runs = (0..cfg.l)
        .into_par_iter()
        .map(|r| {
            run_filter(
                dm,
                &fcfg,
                x0.as_deref(),
                &theta,
                &y,
                &RngStream::new(cfg.seed, &[r as u64]),
            )
        })
        .collect::<ssm_core::Result<Vec<_>>>()?;

    let mut out = csv_writer(w.file("replicates.csv")?);
    let mut header = vec!["replicate", "log_lik", "collapsed", "collapse_time"];
    if exact.is_some() {
        header.push("exact_log_lik");
    }
    out.write_record(&header)?;
    for (r, run) in runs.iter().enumerate() {
        let e = &run.estimate;
        let mut row = vec![
            r.to_string(),
            format_f64(e.log_likelihood),
            u8::from(e.collapsed).to_string(),
            e.collapse_time.map(|t| t.to_string()).unwrap_or_default(),
        ];
        if let Some(x) = exact {
            row.push(format_f64(x));
        }
        out.write_record(&row)?;
    }
    out.flush()?;

    if cfg.dump_increments {
        let mut out = csv_writer(w.file("increments.csv")?);
        out.write_record(["replicate", "t", "increment", "ess"])?;
        for (r, run) in runs.iter().enumerate() {
            for (k, inc) in run.estimate.increments.iter().enumerate() {
                let ess = run.ess.get(k).map(|v| format_f64(*v)).unwrap_or_default();
                out.write_record([r.to_string(), (k + 1).to_string(), format_f64(*inc), ess])?;
            }
        }
        out.flush()?;
    }

    let ll: Vec<f64> = runs.iter().map(|r| r.estimate.log_likelihood).collect();
    let finite: Vec<f64> = ll.iter().copied().filter(|v| v.is_finite()).collect();
    let (mean, sd) = mean_sd(&finite);
    let car = match car_sorted(&ll) {
        Ok(a) => Some(a),
        Err(Error::UndefinedCar) => None,
        Err(e) => return Err(e.into()),
    };
    let summary = json!({
        "scheme": fcfg.scheme,
        "m": fcfg.m,
        "l": cfg.l,
        "theta": theta,
        "x0": x0,
        "mean_log_lik": mean,
        "sd_log_lik": sd,
        "car": car,
        "collapsed": ll.len() - finite.len(),
        "exact_log_lik": exact,
        "ukf_fallbacks": runs.iter().map(|r| r.fallbacks).sum::<usize>(),
        "propagations_per_replicate": count_propagations(fcfg.scheme, fcfg.m as u64, dm.dims(), y.len() as u64),
    });
    w.json("summary.json", &summary)?;
    Ok(json!({ "m": fcfg.m, "factorization": fact }))
}

fn start_belief(
    cfg: &RunConfig,
    model: &dyn StateSpaceModel,
    y: &[Vec<f64>],
    fact: Factorization,
) -> Result<GaussianBelief> {
    match cfg.proposal.start {
        StartKind::Ukf => Ok(joint_ukf_init(model, y, &cfg.ut)
            .context("joint UKF initialisation")?
            .chain_belief(fact)?),
        StartKind::Prior => {
            let joint = joint_prior(model)?;
            let n_x = model.dims().n_x;
            Ok(match fact {
                Factorization::X0InChain => joint,
                Factorization::X0InFilter => joint.marginal(n_x, joint.dim() - n_x)?,
            })
        }
    }
}

fn cmd_pmmh(cfg: &RunConfig, w: &mut Outputs) -> Result<serde_json::Value> {
    ensure!(cfg.chains >= 1, "`chains` must be at least 1");
    let model = AnyModel::build(cfg)?;
    let dm = model.as_dyn();
    let y = load_data(cfg, dm)?;
    let fcfg = filter_config(cfg, dm)?;
    let fact = factorization(cfg, dm);
    let est = estimator(cfg, &model, &y, fcfg)?;
    let start = start_belief(cfg, dm, &y, fact)?;
    let base_cov = start.covariance();
    let tuning: Option<TuneResult> = match cfg.proposal.scale {
        Some(_) => None,
        None => Some(tune_scale(
            est.as_ref(),
            &base_cov,
            &start,
            cfg.seed,
            &cfg.proposal.tune,
        )?),
    };
    let scale = cfg
        .proposal
        .scale
        .or(tuning.as_ref().map(|t| t.scale))
        .expect("scale given or tuned");
    let chain_cfg = ChainConfig {
        n_steps: cfg.n_steps,
        seed: cfg.seed,
        proposal_cov: &base_cov * scale,
        start: start.clone(),
    };
    let clock = Instant::now();
    let chains = run_chains(&chain_cfg, est.as_ref(), cfg.chains)?;
    let runtime = clock.elapsed().as_secs_f64();
    let names = chain_prior(dm, fact).names;
    for (k, c) in chains.iter().enumerate() {
        write_chain_csv(&w.path(&format!("chain_{k}.csv")), &names, c)?;
    }
    let rhat = if chains.len() >= 2 && cfg.n_steps + 1 >= 10 {
        let draws: Vec<Vec<Vec<f64>>> = chains.iter().map(|c| c.draws()).collect();
        Some(rhat_multivariate(&draws)?)
    } else {
        None
    };
    let summary = json!({
        "scheme": fcfg.scheme,
        "m": fcfg.m,
        "likelihood": cfg.likelihood,
        "factorization": fact,
        "names": names,
        "start_mean": start.mean.as_slice(),
        "start_cov": rows(&base_cov),
        "proposal_scale": scale,
        "tuning": tuning,
        "chains": chains.iter().map(|c| &c.stats).collect::<Vec<_>>(),
        "acceptance_rate": chains.iter().map(|c| c.stats.accepted).sum::<usize>() as f64
            / (chains.len() * cfg.n_steps).max(1) as f64,
        "rhat": rhat,
        "runtime_secs": runtime,
    });
    w.json("summary.json", &summary)?;
    Ok(json!({ "m": fcfg.m, "factorization": fact, "proposal_scale": scale }))
}

fn cmd_car(cfg: &RunConfig, w: &mut Outputs) -> Result<serde_json::Value> {
    let model = AnyModel::build(cfg)?;
    let dm = model.as_dyn();
    let y = load_data(cfg, dm)?;
    let fcfg = filter_config(cfg, dm)?;
    let fact = factorization(cfg, dm);
    let est = estimator(cfg, &model, &y, fcfg)?;
    let prior = est.chain_prior();
    let points = match cfg.points {
        PointsSpec::Grid { per_axis } => {
            let total = (per_axis as u128)
                .checked_pow(prior.len() as u32)
                .unwrap_or(u128::MAX);
            ensure!(
                total <= MAX_GRID_POINTS as u128,
                "a {per_axis}-per-axis grid over {} coordinates is too large; use prior draws",
                prior.len()
            );
            grid_points(&prior, per_axis)
        }
        PointsSpec::PriorDraws { count } => prior_draws(
            &prior,
            count,
            &RngStream::new(cfg.seed, &[POINT_DRAW_LABEL]),
        ),
    };
    let survey = car_survey(est.as_ref(), &points, cfg.l, cfg.seed)?;
    let mut f = w.file("car.csv")?;
    survey.write_csv(&mut f)?;
    f.flush()?;
    let mut f = w.file("replicates.csv")?;
    survey.write_replicates_csv(&mut f)?;
    f.flush()?;

    let defined: Vec<(Vec<f64>, f64)> = survey
        .points
        .iter()
        .filter_map(|p| p.alpha.map(|a| (p.location.clone(), a)))
        .collect();
    let (locs, alphas): (Vec<Vec<f64>>, Vec<f64>) = defined.into_iter().unzip();
    let ranks = rank_export(&locs, &alphas)?;
    let mut f = w.file("ranks.csv")?;
    write_rank_export(&mut f, &prior.names, &ranks)?;
    f.flush()?;

    let summary = json!({
        "scheme": fcfg.scheme,
        "m": fcfg.m,
        "l": cfg.l,
        "names": prior.names,
        "points": survey.points.len(),
        "undefined": survey.points.len() - alphas.len(),
        "mean_car": mean_sd(&alphas).0,
    });
    w.json("summary.json", &summary)?;
    Ok(json!({ "m": fcfg.m, "factorization": fact }))
}

fn chain_files(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    if !cfg.rhat.chains.is_empty() {
        return Ok(cfg.rhat.chains.clone());
    }
    let dir = cfg
        .rhat
        .dir
        .as_ref()
        .ok_or_else(|| anyhow!("rhat needs `rhat.chains` or `rhat.dir`"))?;
    let mut found: Vec<(u64, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let name = path
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        if let Some(k) = name
            .strip_prefix("chain_")
            .and_then(|s| s.strip_suffix(".csv"))
        {
            if let Ok(k) = k.parse::<u64>() {
                found.push((k, path));
            }
        }
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

fn cmd_rhat(cfg: &RunConfig, w: &mut Outputs) -> Result<serde_json::Value> {
    ensure!(cfg.rhat.interval >= 1, "`rhat.interval` must be positive");
    let files = chain_files(cfg)?;
    ensure!(
        files.len() >= 2,
        "rhat needs at least two chains, found {}",
        files.len()
    );
    let mut names: Option<Vec<String>> = None;
    let mut chains = Vec::with_capacity(files.len());
    for f in &files {
        let (n, draws) = read_chain_draws(f)?;
        match &names {
            Some(prev) => ensure!(*prev == n, "{} has different parameters", f.display()),
            None => names = Some(n),
        }
        chains.push(draws);
    }
    let len = chains.iter().map(Vec::len).min().unwrap_or(0);
    ensure!(
        chains.iter().all(|c| c.len() == len),
        "chains differ in length"
    );
    let mut at: Vec<usize> = (1..=len / cfg.rhat.interval)
        .map(|k| k * cfg.rhat.interval)
        .filter(|&n| n >= 10)
        .collect();
    if len >= 10 && at.last() != Some(&len) {
        at.push(len);
    }
    let trace: Vec<(usize, Rhat)> = at
        .par_iter()
        .map(|&n| {
            let cut: Vec<Vec<Vec<f64>>> = chains.iter().map(|c| c[..n].to_vec()).collect();
            rhat_multivariate(&cut).map(|r| (n, r))
        })
        .collect::<ssm_core::Result<_>>()?;
    let mut out = csv_writer(w.file("rhat.csv")?);
    out.write_record(["draws", "rhat", "regularized"])?;
    for (n, r) in &trace {
        out.write_record([
            n.to_string(),
            format_f64(r.value),
            u8::from(r.regularized).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(json!({
        "chains": files,
        "draws": len,
        "final": trace.last().map(|(_, r)| r.value),
    }))
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::Writer::from_writer(w)
}

fn mean_sd(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.len() > 1)
        .then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), sd)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}
