use nalgebra::{DMatrix, DVector};

use crate::apf::{count_propagations, run_filter, FilterConfig};
use crate::error::{check_len, Result};
use crate::model::{Factorization, StateSpaceModel};
use crate::models::LinearGaussianModel;
use crate::prior::Prior;
use crate::rng::RngStream;

/// Log-likelihood of the data at a chain point `z`, given in natural
/// coordinates: `(x0, θ)` when the initial state is in the chain, else `θ`.
pub trait LikelihoodEstimator: Sync {
    fn estimate(&self, z: &[f64], stream: &RngStream) -> Result<f64>;

    /// Prior over the chain coordinates.
    fn chain_prior(&self) -> Prior;

    /// Model propagations spent by one call to [`estimate`](Self::estimate).
    fn propagations(&self) -> u64 {
        0
    }
}

/// Chain coordinates prior for a model under a factorization.
pub fn chain_prior<M: StateSpaceModel + ?Sized>(model: &M, factorization: Factorization) -> Prior {
    match factorization {
        Factorization::X0InChain => model.x0_prior().concat(model.theta_prior()),
        Factorization::X0InFilter => model.theta_prior().clone(),
    }
}

/// Splits a chain point into `(x0, θ)`.
pub fn split_chain_point(
    z: &[f64],
    n_x: usize,
    factorization: Factorization,
) -> (Option<&[f64]>, &[f64]) {
    match factorization {
        Factorization::X0InChain => {
            let (x0, theta) = z.split_at(n_x.min(z.len()));
            (Some(x0), theta)
        }
        Factorization::X0InFilter => (None, z),
    }
}

/// Auxiliary particle filter estimate; collapse gives `-inf`.
pub struct ParticleLikelihood<'a, M: StateSpaceModel + ?Sized> {
    pub model: &'a M,
    pub y: &'a [Vec<f64>],
    pub filter: FilterConfig,
    pub factorization: Factorization,
}

impl<'a, M: StateSpaceModel + ?Sized> ParticleLikelihood<'a, M> {
    pub fn new(
        model: &'a M,
        y: &'a [Vec<f64>],
        filter: FilterConfig,
        factorization: Factorization,
    ) -> Self {
        Self {
            model,
            y,
            filter,
            factorization,
        }
    }
}

impl<M: StateSpaceModel + ?Sized> LikelihoodEstimator for ParticleLikelihood<'_, M> {
    fn estimate(&self, z: &[f64], stream: &RngStream) -> Result<f64> {
        let d = self.model.dims();
        let expected = match self.factorization {
            Factorization::X0InChain => d.n_x + d.n_theta,
            Factorization::X0InFilter => d.n_theta,
        };
        check_len("chain point", expected, z.len())?;
        let (x0, theta) = split_chain_point(z, d.n_x, self.factorization);
        let run = run_filter(self.model, &self.filter, x0, theta, self.y, stream)?;
        Ok(run.estimate.log_likelihood)
    }

    fn chain_prior(&self) -> Prior {
        chain_prior(self.model, self.factorization)
    }

    fn propagations(&self) -> u64 {
        count_propagations(
            self.filter.scheme,
            self.filter.m as u64,
            self.model.dims(),
            self.y.len() as u64,
        )
    }
}

/// Exact Kalman likelihood for the linear-Gaussian model. Ignores the stream.
pub struct KalmanLikelihood<'a> {
    pub model: &'a LinearGaussianModel,
    pub y: &'a [Vec<f64>],
    pub factorization: Factorization,
}

impl LikelihoodEstimator for KalmanLikelihood<'_> {
    fn estimate(&self, z: &[f64], _stream: &RngStream) -> Result<f64> {
        let n_x = self.model.dims().n_x;
        let (x0, theta) = split_chain_point(z, n_x, self.factorization);
        let (m0, p0) = match x0 {
            Some(x) => {
                check_len("initial state", n_x, x.len())?;
                (DVector::from_column_slice(x), DMatrix::zeros(n_x, n_x))
            }
            None => self.model.x0_moments(),
        };
        self.model.kalman_log_likelihood(self.y, &m0, &p0, theta)
    }

    fn chain_prior(&self) -> Prior {
        chain_prior(self.model, self.factorization)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apf::ProposalScheme;
    use crate::models::{simulate_dataset, PzModel};

    #[test]
    fn particle_estimate_matches_direct_filter() {
        let m = PzModel::default();
        let sim = simulate_dataset(&m, &[0.3, 0.1], &[2.0, 2.0, 0.3], 20, 2, 1.0).unwrap();
        let cfg = FilterConfig::new(ProposalScheme::Pf0, 16);
        let est = ParticleLikelihood::new(&m, &sim.data.y, cfg, Factorization::X0InFilter);
        let s = RngStream::root(4);
        let direct = run_filter(&m, &cfg, None, &[0.3, 0.1], &sim.data.y, &s).unwrap();
        assert_eq!(
            est.estimate(&[0.3, 0.1], &s).unwrap(),
            direct.estimate.log_likelihood
        );
        assert_eq!(est.propagations(), 16 * 20);
        assert!(est.estimate(&[0.3], &s).is_err());
    }

    #[test]
    fn kalman_with_fixed_initial_state() {
        let m =
            LinearGaussianModel::scalar(0.8, 1.0, 0.5).with_factorization(Factorization::X0InChain);
        let y = vec![vec![1.0], vec![0.2]];
        let k = KalmanLikelihood {
            model: &m,
            y: &y,
            factorization: Factorization::X0InChain,
        };
        let got = k.estimate(&[1.0, 0.0], &RngStream::root(0)).unwrap();
        let want = m
            .kalman_log_likelihood(
                &y,
                &DVector::from_element(1, 1.0),
                &DMatrix::zeros(1, 1),
                &[0.0],
            )
            .unwrap();
        assert_eq!(got, want);
        assert_eq!(k.chain_prior().len(), 2);
    }
}
