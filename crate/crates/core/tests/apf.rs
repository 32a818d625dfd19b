use nalgebra::DMatrix;
use ssm_core::apf::{
    count_propagations, extract_trajectory, run_filter, FilterConfig, ProposalScheme,
};
use ssm_core::models::{simulate_dataset, LinearGaussianModel, NpzdModel, PzModel};
use ssm_core::{noise_to_state, RngStream, StateSpaceModel};

fn scalar_data() -> (LinearGaussianModel, Vec<Vec<f64>>) {
    let m = LinearGaussianModel::scalar(0.9, 1.0, 1.0);
    let sim = simulate_dataset(&m, &[0.5], &[0.0], 10, 17, 1.0).unwrap();
    (m, sim.data.y)
}

#[test]
fn empty_data() {
    let (m, _) = scalar_data();
    let run = run_filter(
        &m,
        &FilterConfig::new(ProposalScheme::Cupf1, 8),
        None,
        &[0.5],
        &[],
        &RngStream::root(1),
    )
    .unwrap();
    assert_eq!(run.estimate.log_likelihood, 0.0);
    assert!(run.estimate.increments.is_empty());
}

#[test]
fn increments_sum_to_estimate() {
    let (m, y) = scalar_data();
    for scheme in ProposalScheme::ALL {
        let run = run_filter(
            &m,
            &FilterConfig::new(scheme, 16),
            None,
            &[0.5],
            &y,
            &RngStream::root(2),
        )
        .unwrap();
        let sum: f64 = run.estimate.increments.iter().sum();
        assert!((sum - run.estimate.log_likelihood).abs() < 1e-12);
        let w = run.system.normalized_weights().unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(run.system.ancestors.iter().all(|&a| a < 16));
    }
}

#[test]
fn estimator_is_unbiased_for_every_scheme() {
    let (m, y) = scalar_data();
    let (m0, p0) = m.x0_moments();
    let exact = m.kalman_log_likelihood(&y, &m0, &p0, &[0.5]).unwrap();
    for scheme in ProposalScheme::ALL {
        let cfg = FilterConfig::new(scheme, 32);
        let ratios: Vec<f64> = (0..500u64)
            .map(|r| {
                let run = run_filter(&m, &cfg, None, &[0.5], &y, &RngStream::new(5, &[r])).unwrap();
                (run.estimate.log_likelihood - exact).exp()
            })
            .collect();
        let n = ratios.len() as f64;
        let mean = ratios.iter().sum::<f64>() / n;
        let var = ratios.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!(
            (mean - 1.0).abs() < 3.0 * se,
            "{scheme}: mean ratio {mean}, se {se}"
        );
    }
}

#[test]
fn noiseless_dynamics_give_equal_weights() {
    let m = LinearGaussianModel::new(
        DMatrix::from_element(1, 1, 0.7),
        DMatrix::zeros(1, 1),
        DMatrix::identity(1, 1),
        vec![0.5],
    )
    .unwrap();
    let y: Vec<Vec<f64>> = (1..=5).map(|t| vec![0.7f64.powi(t)]).collect();
    let run = run_filter(
        &m,
        &FilterConfig::new(ProposalScheme::Pf0, 10).with_history(),
        Some(&[1.0]),
        &[0.0],
        &y,
        &RngStream::root(3),
    )
    .unwrap();
    for step in run.history.unwrap() {
        assert!(step.log_w.iter().all(|w| *w == step.log_w[0]));
    }
}

#[test]
fn uninformative_lookahead_reduces_to_bootstrap() {
    // With B = 0 the look-ahead proposal is exactly N(0, I).
    let m = LinearGaussianModel::new(
        DMatrix::from_element(1, 1, 0.7),
        DMatrix::zeros(1, 1),
        DMatrix::identity(1, 1),
        vec![0.5],
    )
    .unwrap();
    let y: Vec<Vec<f64>> = (1..=8).map(|t| vec![(t as f64).sin()]).collect();
    let s = RngStream::root(4);
    let a = run_filter(
        &m,
        &FilterConfig::new(ProposalScheme::Pf0, 32),
        None,
        &[0.1],
        &y,
        &s,
    )
    .unwrap();
    let b = run_filter(
        &m,
        &FilterConfig::new(ProposalScheme::Mupf0, 32),
        None,
        &[0.1],
        &y,
        &s,
    )
    .unwrap();
    assert!((a.estimate.log_likelihood - b.estimate.log_likelihood).abs() < 1e-12);
    for (wa, wb) in a.system.log_w.iter().zip(&b.system.log_w) {
        assert!((wa - wb).abs() < 1e-12);
    }
    assert_eq!(a.system.ancestors, b.system.ancestors);
}

#[test]
fn trajectory_replays() {
    let m = PzModel::default();
    let sim = simulate_dataset(&m, &[0.3, 0.1], &[2.0, 2.0, 0.3], 30, 8, 1.0).unwrap();
    for scheme in [
        ProposalScheme::Pf0,
        ProposalScheme::Mupf1,
        ProposalScheme::Cupf1,
    ] {
        let run = run_filter(
            &m,
            &FilterConfig::new(scheme, 32).with_history(),
            None,
            &[0.3, 0.1],
            &sim.data.y,
            &RngStream::root(6),
        )
        .unwrap();
        let path = extract_trajectory(&run, &RngStream::root(7)).unwrap();
        assert_eq!(path.u.len(), 30);
        let replay = noise_to_state(&m, &path.x0, &[0.3, 0.1], &path.u).unwrap();
        assert_eq!(replay, path.x);
    }
}

#[test]
fn single_particle_path() {
    let (m, y) = scalar_data();
    let run = run_filter(
        &m,
        &FilterConfig::new(ProposalScheme::Pf0, 1).with_history(),
        Some(&[0.0]),
        &[0.5],
        &y,
        &RngStream::root(9),
    )
    .unwrap();
    let path = extract_trajectory(&run, &RngStream::root(10)).unwrap();
    assert_eq!(path.index, 0);
    let h = run.history.as_ref().unwrap();
    for (s, step) in h.iter().enumerate() {
        assert_eq!(path.x[s], step.x[0]);
    }
    // M = 1: each increment is w·ω.
    for (s, step) in h.iter().enumerate() {
        assert!((run.estimate.increments[s] - (step.log_w[0] + step.log_omega[0])).abs() < 1e-12);
    }
}

#[test]
fn identical_across_thread_counts() {
    let m = PzModel::default();
    let sim = simulate_dataset(&m, &[0.3, 0.1], &[2.0, 2.0, 0.3], 20, 8, 1.0).unwrap();
    for scheme in ProposalScheme::ALL {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                run_filter(
                    &m,
                    &FilterConfig::new(scheme, 48),
                    None,
                    &[0.3, 0.1],
                    &sim.data.y,
                    &RngStream::root(11),
                )
                .unwrap()
            })
        };
        let a = run(1);
        let b = run(8);
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.system, b.system);
    }
}

#[test]
fn propagation_counts() {
    let pz = PzModel::default().dims();
    assert_eq!(
        count_propagations(ProposalScheme::Pf0, 512, pz, 100),
        51_200
    );
    assert_eq!(count_propagations(ProposalScheme::Pf1, 512, pz, 1), 1024);
    assert_eq!(
        count_propagations(ProposalScheme::Mupf0, 64, pz, 1),
        64 + 11
    );
    assert_eq!(
        count_propagations(ProposalScheme::Mupf1, 64, pz, 1),
        128 + 11
    );
    assert_eq!(
        count_propagations(ProposalScheme::Cupf0, 64, pz, 1),
        64 + 5 * 64
    );
    assert_eq!(
        count_propagations(ProposalScheme::Cupf1, 64, pz, 1),
        64 + 5 * 64
    );
    let npzd = NpzdModel::default().dims();
    assert_eq!(
        count_propagations(ProposalScheme::Mupf0, 10, npzd, 1),
        10 + 2 * (9 + 13 + 2) + 1
    );
    assert_eq!(
        count_propagations(ProposalScheme::Cupf1, 10, npzd, 1),
        10 + 10 * (2 * (9 + 2) + 1)
    );
}

#[test]
fn scheme_names_round_trip() {
    for s in ProposalScheme::ALL {
        assert_eq!(s.to_string().parse::<ProposalScheme>().unwrap(), s);
        assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{s}\""));
    }
}
