//! Shared fixtures for the benchmarks.

use ssm_core::models::{simulate_dataset, LinearGaussianModel, PzModel};
use ssm_core::RngStream;

/// PZ model with 100 days simulated at θ = (0.3, 0.1).
pub fn pz_fixture() -> (PzModel, Vec<Vec<f64>>) {
    let model = PzModel::default();
    let y = simulate_dataset(&model, &[0.3, 0.1], &[2.0, 2.0, 0.3], 100, 1, 1.0)
        .expect("PZ simulation")
        .data
        .y;
    (model, y)
}

pub fn linear_fixture(t: usize) -> (LinearGaussianModel, Vec<Vec<f64>>) {
    let model = LinearGaussianModel::scalar(0.9, 1.0, 1.0);
    let y = simulate_dataset(&model, &[0.5], &[0.0], t, 1, 1.0)
        .expect("linear simulation")
        .data
        .y;
    (model, y)
}

/// `l` log-likelihood replicates spread over `spread` nats.
pub fn replicates(l: usize, spread: f64) -> Vec<f64> {
    ssm_core::draw_uniform(&RngStream::new(3, &[l as u64]), l)
        .into_iter()
        .map(|u| -200.0 + spread * u)
        .collect()
}

/// Four chains of `n` bivariate draws.
pub fn chains(n: usize) -> Vec<Vec<Vec<f64>>> {
    (0..4u64)
        .map(|c| {
            let z = ssm_core::draw_stream(&RngStream::new(4, &[c]), 2 * n);
            z.chunks_exact(2).map(|p| p.to_vec()).collect()
        })
        .collect()
}
