use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::estimator::LikelihoodEstimator;
use crate::error::{check_len, Error, Result};
use crate::linalg::CholeskyFactor;
use crate::models::simulate::format_f64;
use crate::prior::Prior;
use crate::rng::{draw_stream, draw_uniform, RngStream};
use crate::ukf::GaussianBelief;

/// One state of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSample {
    pub step: usize,
    /// Unconstrained coordinates (log for log-normal components).
    pub s: Vec<f64>,
    /// Natural coordinates.
    pub z: Vec<f64>,
    /// Prior density of `s`, log-Jacobian included.
    pub log_prior: f64,
    /// Stored estimate at `z`; never recomputed while the chain stays.
    pub log_likelihood: f64,
    pub accepted: bool,
    pub proposal_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    Accepted,
    Rejected,
    /// The estimate at the proposal was `-inf`.
    Collapsed,
    /// The proposal had zero prior density; no estimate was run.
    OutOfSupport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub n_steps: usize,
    pub seed: u64,
    /// Random-walk covariance in unconstrained coordinates.
    pub proposal_cov: DMatrix<f64>,
    /// The initial point is drawn from this belief.
    pub start: GaussianBelief,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub steps: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    /// Likelihood estimates run, including the one at the start.
    pub estimates: usize,
    pub collapsed_rejections: usize,
    pub out_of_support: usize,
    pub propagations: u64,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub samples: Vec<ChainSample>,
    pub stats: ChainStats,
}

impl Chain {
    /// Natural coordinates of every sample.
    pub fn draws(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.z.clone()).collect()
    }
}

/// Proposes `s' = s + L ξ` and accepts with probability
/// `min(1, exp(Δ log-likelihood + Δ log-prior))`.
///
/// The stream provides `[0]` for `ξ`, `[1]` for the acceptance uniform and
/// `[2]` for the likelihood estimate.
pub fn mh_step(
    current: &ChainSample,
    prior: &Prior,
    proposal: &CholeskyFactor,
    estimator: &dyn LikelihoodEstimator,
    stream: &RngStream,
) -> Result<(ChainSample, StepOutcome)> {
    let d = current.s.len();
    check_len("proposal covariance", d, proposal.dim())?;
    let xi = DVector::from_vec(draw_stream(&stream.child(0), d));
    let s_new: Vec<f64> = (DVector::from_column_slice(&current.s) + proposal.mul_vec(&xi))
        .iter()
        .copied()
        .collect();
    let stay = |outcome| {
        let mut next = current.clone();
        next.step += 1;
        next.proposal_count += 1;
        next.accepted = false;
        (next, outcome)
    };
    let log_prior = prior.log_density_unconstrained(&s_new)?;
    if !log_prior.is_finite() {
        return Ok(stay(StepOutcome::OutOfSupport));
    }
    let z_new = prior.from_unconstrained(&s_new);
    let log_likelihood = estimator.estimate(&z_new, &stream.child(2))?;
    if log_likelihood == f64::NEG_INFINITY || log_likelihood.is_nan() {
        return Ok(stay(StepOutcome::Collapsed));
    }
    let log_ratio = (log_likelihood - current.log_likelihood) + (log_prior - current.log_prior);
    let u = draw_uniform(&stream.child(1), 1)[0];
    if u.ln() < log_ratio {
        Ok((
            ChainSample {
                step: current.step + 1,
                s: s_new,
                z: z_new,
                log_prior,
                log_likelihood,
                accepted: true,
                proposal_count: current.proposal_count + 1,
            },
            StepOutcome::Accepted,
        ))
    } else {
        Ok(stay(StepOutcome::Rejected))
    }
}

fn proposal_factor(cov: &DMatrix<f64>) -> Result<CholeskyFactor> {
    CholeskyFactor::factor(cov).or_else(|_| CholeskyFactor::factor_psd(cov, 1e-14))
}

/// Draws a start point inside the prior support.
fn draw_start(start: &GaussianBelief, prior: &Prior, stream: &RngStream) -> Result<Vec<f64>> {
    check_len("start belief", prior.len(), start.dim())?;
    for attempt in 0..1000u64 {
        let xi = DVector::from_vec(draw_stream(&stream.child(attempt), start.dim()));
        let s: Vec<f64> = (&start.mean + start.chol.mul_vec(&xi))
            .iter()
            .copied()
            .collect();
        if prior.log_density_unconstrained(&s)?.is_finite() {
            return Ok(s);
        }
    }
    Err(Error::Config(
        "start belief puts no mass on the prior support".into(),
    ))
}

/// Runs one chain on `stream`: `[0]` for the start point, `[k]` for step `k`.
pub fn run_chain_on(
    cfg: &ChainConfig,
    estimator: &dyn LikelihoodEstimator,
    stream: &RngStream,
) -> Result<Chain> {
    let clock = Instant::now();
    let prior = estimator.chain_prior();
    let proposal = proposal_factor(&cfg.proposal_cov)?;
    check_len("proposal covariance", prior.len(), proposal.dim())?;
    let start = stream.child(0);
    let s = draw_start(&cfg.start, &prior, &start.child(0))?;
    let z = prior.from_unconstrained(&s);
    let log_prior = prior.log_density_unconstrained(&s)?;
    let log_likelihood = estimator.estimate(&z, &start.child(2))?;
    let mut samples = Vec::with_capacity(cfg.n_steps + 1);
    samples.push(ChainSample {
        step: 0,
        s,
        z,
        log_prior,
        log_likelihood,
        accepted: true,
        proposal_count: 0,
    });
    let mut stats = ChainStats {
        estimates: 1,
        ..ChainStats::default()
    };
    for k in 1..=cfg.n_steps {
        let current = samples.last().expect("chain has a start sample");
        let (next, outcome) = mh_step(
            current,
            &prior,
            &proposal,
            estimator,
            &stream.child(k as u64),
        )?;
        match outcome {
            StepOutcome::Accepted => {
                stats.accepted += 1;
                stats.estimates += 1;
            }
            StepOutcome::Rejected => stats.estimates += 1,
            StepOutcome::Collapsed => {
                stats.estimates += 1;
                stats.collapsed_rejections += 1;
            }
            StepOutcome::OutOfSupport => stats.out_of_support += 1,
        }
        samples.push(next);
    }
    stats.steps = cfg.n_steps;
    stats.acceptance_rate = if cfg.n_steps == 0 {
        0.0
    } else {
        stats.accepted as f64 / cfg.n_steps as f64
    };
    stats.propagations = estimator.propagations() * stats.estimates as u64;
    stats.runtime_secs = clock.elapsed().as_secs_f64();
    Ok(Chain { samples, stats })
}

/// Runs chain number `chain` on the stream `(seed, [chain])`.
pub fn run_chain(
    cfg: &ChainConfig,
    estimator: &dyn LikelihoodEstimator,
    chain: u64,
) -> Result<Chain> {
    run_chain_on(cfg, estimator, &RngStream::new(cfg.seed, &[chain]))
}

/// Runs chains `0..n` concurrently.
pub fn run_chains(
    cfg: &ChainConfig,
    estimator: &dyn LikelihoodEstimator,
    n: usize,
) -> Result<Vec<Chain>> {
    (0..n as u64)
        .into_par_iter()
        .map(|c| run_chain(cfg, estimator, c))
        .collect()
}

/// Writes `step, <names>..., log_prior, log_lik, accepted` with natural
/// coordinates.
pub fn write_chain_csv(path: &Path, names: &[String], chain: &Chain) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_chain(&mut out, names, chain)?;
    out.flush()?;
    Ok(())
}

pub fn write_chain<W: Write>(out: W, names: &[String], chain: &Chain) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string()];
    header.extend(names.iter().cloned());
    header.extend(["log_prior", "log_lik", "accepted"].map(String::from));
    w.write_record(&header)?;
    for s in &chain.samples {
        check_len("chain sample", names.len(), s.z.len())?;
        let mut row = vec![s.step.to_string()];
        row.extend(s.z.iter().map(|v| format_f64(*v)));
        row.push(format_f64(s.log_prior));
        row.push(format_f64(s.log_likelihood));
        row.push(u8::from(s.accepted).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a chain written by [`write_chain_csv`] back as natural-coordinate
/// draws with the parameter names.
pub fn read_chain_draws(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header.len() < 4 || header[0] != "step" {
        return Err(Error::Config(format!(
            "{} is not a chain file",
            path.display()
        )));
    }
    let d = header.len() - 4;
    let names = header[1..=d].to_vec();
    let mut draws = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = (1..=d)
            .map(|j| {
                rec[j].parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 2,
                    msg: e.to_string(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        draws.push(row);
    }
    Ok((names, draws))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::Univariate;

    /// Exact likelihood `N(z; 0, 1)` or a two-point table.
    struct Table {
        prior: Prior,
        f: fn(&[f64]) -> f64,
        calls: std::sync::atomic::AtomicUsize,
    }

    impl LikelihoodEstimator for Table {
        fn estimate(&self, z: &[f64], _: &RngStream) -> Result<f64> {
            self.calls
                .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            Ok((self.f)(z))
        }
        fn chain_prior(&self) -> Prior {
            self.prior.clone()
        }
    }

    fn flat(lower: f64, upper: f64, f: fn(&[f64]) -> f64) -> Table {
        Table {
            prior: Prior::new(vec!["a".into()], vec![Univariate::Uniform { lower, upper }]),
            f,
            calls: Default::default(),
        }
    }

    fn config(n_steps: usize, var: f64, start: f64) -> ChainConfig {
        ChainConfig {
            n_steps,
            seed: 1,
            proposal_cov: DMatrix::from_element(1, 1, var),
            start: GaussianBelief::point(DVector::from_element(1, start)),
        }
    }

    #[test]
    fn zero_steps() {
        let est = flat(-1.0, 1.0, |_| 0.0);
        let chain = run_chain(&config(0, 1.0, 0.2), &est, 0).unwrap();
        assert_eq!(chain.samples.len(), 1);
        assert_eq!(chain.samples[0].z, vec![0.2]);
        assert_eq!(chain.stats.estimates, 1);
    }

    #[test]
    fn out_of_support_runs_no_estimate() {
        let est = flat(0.0, 1e-9, |_| 0.0);
        let chain = run_chain(&config(50, 100.0, 0.0), &est, 0).unwrap();
        assert_eq!(est.calls.load(std::sync::atomic::Ordering::Relaxed), 1);
        assert_eq!(chain.stats.out_of_support, 50);
        assert!(chain.samples.iter().all(|s| s.z == vec![0.0]));
    }

    #[test]
    fn identity_move_always_accepted() {
        let est = flat(-1.0, 1.0, |z| -z[0] * z[0]);
        let chain = run_chain(&config(100, 0.0, 0.3), &est, 0).unwrap();
        assert_eq!(chain.stats.accepted, 100);
        assert_eq!(chain.stats.acceptance_rate, 1.0);
    }

    #[test]
    fn estimates_equal_proposals_in_support() {
        let est = flat(-1.0, 1.0, |z| -z[0] * z[0]);
        let chain = run_chain(&config(400, 0.5, 0.0), &est, 3).unwrap();
        let calls = est.calls.load(std::sync::atomic::Ordering::Relaxed);
        assert_eq!(calls, 1 + 400 - chain.stats.out_of_support);
        assert_eq!(calls, chain.stats.estimates);
        assert!(chain.stats.out_of_support > 0);
        let acc = chain.samples[1..].iter().filter(|s| s.accepted).count();
        assert_eq!(chain.stats.acceptance_rate, acc as f64 / 400.0);
    }

    #[test]
    fn collapse_counted_separately() {
        let est = flat(
            -1.0,
            1.0,
            |z| if z[0] > 0.0 { f64::NEG_INFINITY } else { 0.0 },
        );
        let chain = run_chain(&config(300, 0.25, -0.5), &est, 0).unwrap();
        assert!(chain.stats.collapsed_rejections > 0);
        assert!(chain.samples.iter().all(|s| s.z[0] <= 0.0));
    }

    #[test]
    fn two_state_acceptance_matches_analytic() {
        // Likelihood takes two values, 1 above zero and e^{-1.5} below. One
        // step from just above zero, repeated with fresh streams.
        let est = flat(-10.0, 10.0, |z| if z[0] > 0.0 { 0.0 } else { -(1.5f64) });
        let prior = est.chain_prior();
        let proposal = CholeskyFactor::from_sd(&[1.0]);
        let current = ChainSample {
            step: 0,
            s: vec![1e-300],
            z: vec![1e-300],
            log_prior: prior.log_density_unconstrained(&[1e-300]).unwrap(),
            log_likelihood: 0.0,
            accepted: true,
            proposal_count: 0,
        };
        let expected = 0.5 + 0.5 * (-1.5f64).exp();
        let n = 10_000;
        let acc = (0..n)
            .filter(|&k| {
                let (_, o) =
                    mh_step(&current, &prior, &proposal, &est, &RngStream::new(9, &[k])).unwrap();
                o == StepOutcome::Accepted
            })
            .count() as f64
            / n as f64;
        let se = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!((acc - expected).abs() < 3.0 * se, "{acc} vs {expected}");
    }

    #[test]
    fn deterministic() {
        let est = flat(-3.0, 3.0, |z| -0.5 * z[0] * z[0]);
        let cfg = config(200, 1.0, 0.0);
        let a = run_chain(&cfg, &est, 5).unwrap();
        let b = run_chain(&cfg, &est, 5).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = run_chain(&cfg, &est, 6).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn csv_round_trip() {
        let est = flat(-3.0, 3.0, |z| -0.5 * z[0] * z[0]);
        let chain = run_chain(&config(20, 1.0, 0.0), &est, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.csv");
        write_chain_csv(&path, &["a".to_string()], &chain).unwrap();
        let (names, draws) = read_chain_draws(&path).unwrap();
        assert_eq!(names, vec!["a"]);
        assert_eq!(draws, chain.draws());
    }
}
