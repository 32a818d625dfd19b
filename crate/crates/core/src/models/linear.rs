//! Linear-Gaussian test model with an exact Kalman likelihood.
//!
//! ```text
//! x_t = A x_{t-1} + B u_t
//! y_t = H x_t + c 1 + diag(r) e_t
//! ```
//!
//! The only parameter is the observation offset `c`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::linalg::{symmetrize, CholeskyFactor};
use crate::model::{Dims, Factorization, ObsLink, StateSpaceModel};
use crate::prior::{Prior, Univariate};

#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub r: Vec<f64>,
    theta_prior: Prior,
    x0_prior: Prior,
    factorization: Factorization,
}

impl LinearGaussianModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, h: DMatrix<f64>, r: Vec<f64>) -> Result<Self> {
        let n_x = a.nrows();
        check_len("A columns", n_x, a.ncols())?;
        check_len("B rows", n_x, b.nrows())?;
        check_len("H columns", n_x, h.ncols())?;
        check_len("observation sd", h.nrows(), r.len())?;
        if r.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("observation sd must be positive".into()));
        }
        let theta_prior = Prior::new(
            vec!["c".into()],
            vec![Univariate::Normal { mean: 0.0, sd: 1.0 }],
        );
        let x0_prior = Prior::new(
            (1..=n_x).map(|i| format!("x_{i}")).collect(),
            vec![Univariate::Normal { mean: 0.0, sd: 1.0 }; n_x],
        );
        Ok(Self {
            a,
            b,
            h,
            r,
            theta_prior,
            x0_prior,
            factorization: Factorization::X0InFilter,
        })
    }

    /// `x_t = a x_{t-1} + q u_t`, `y_t = x_t + c + r e_t`.
    pub fn scalar(a: f64, q: f64, r: f64) -> Self {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, q),
            DMatrix::from_element(1, 1, 1.0),
            vec![r],
        )
        .expect("scalar model dimensions are consistent")
    }

    pub fn with_priors(mut self, theta_prior: Prior, x0_prior: Prior) -> Self {
        self.theta_prior = theta_prior;
        self.x0_prior = x0_prior;
        self
    }

    pub fn with_factorization(mut self, factorization: Factorization) -> Self {
        self.factorization = factorization;
        self
    }

    /// Mean and covariance of the `x0` prior. Only normal components are
    /// meaningful here.
    pub fn x0_moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let (m, v) = self.x0_prior.unconstrained_moments();
        (
            DVector::from_vec(m),
            DMatrix::from_diagonal(&DVector::from_vec(v)),
        )
    }

    /// Exact `ln p(y_{1:T} | θ)` with `x0 ~ N(m0, p0)`. A point-mass start is
    /// a zero `p0`. Non-finite observation entries are skipped.
    pub fn kalman_log_likelihood(
        &self,
        y: &[Vec<f64>],
        m0: &DVector<f64>,
        p0: &DMatrix<f64>,
        theta: &[f64],
    ) -> Result<f64> {
        check_len("parameters", 1, theta.len())?;
        let c = theta[0];
        let q = &self.b * self.b.transpose();
        let mut m = m0.clone();
        let mut p = p0.clone();
        let mut total = 0.0;
        for yt in y {
            check_len("observation", self.h.nrows(), yt.len())?;
            m = &self.a * m;
            p = symmetrize(&(&self.a * p * self.a.transpose() + &q));
            let idx: Vec<usize> = (0..yt.len()).filter(|&i| yt[i].is_finite()).collect();
            if idx.is_empty() {
                continue;
            }
            let h = self.h.select_rows(&idx);
            let resid = DVector::from_iterator(idx.len(), idx.iter().map(|&i| yt[i] - c)) - &h * &m;
            let mut s = &h * &p * h.transpose();
            for (k, &i) in idx.iter().enumerate() {
                s[(k, k)] += self.r[i] * self.r[i];
            }
            let ls = CholeskyFactor::factor(&symmetrize(&s))?;
            let z = ls.solve_lower(&DMatrix::from_column_slice(idx.len(), 1, resid.as_slice()))?;
            total += -0.5 * z.norm_squared()
                - ls.log_det()
                - 0.5 * idx.len() as f64 * (2.0 * std::f64::consts::PI).ln();
            let ph = &p * h.transpose();
            let gain = ls.solve(&ph.transpose())?.transpose();
            m += &gain * resid;
            p = symmetrize(&(&p - &gain * h * &p));
        }
        Ok(total)
    }
}

impl StateSpaceModel for LinearGaussianModel {
    fn name(&self) -> &str {
        "linear_gaussian_test"
    }

    fn dims(&self) -> Dims {
        Dims {
            n_x: self.a.nrows(),
            n_u: self.b.ncols(),
            n_theta: 1,
            n_y: self.h.nrows(),
        }
    }

    fn transition(&self, u: &[f64], x: &[f64], _theta: &[f64]) -> Result<Vec<f64>> {
        let d = self.dims();
        check_len("noise term", d.n_u, u.len())?;
        check_len("state", d.n_x, x.len())?;
        let next =
            &self.a * DVector::from_column_slice(x) + &self.b * DVector::from_column_slice(u);
        Ok(next.as_slice().to_vec())
    }

    fn observation_mean(&self, x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        check_len("state", self.dims().n_x, x.len())?;
        check_len("parameters", 1, theta.len())?;
        let mean = &self.h * DVector::from_column_slice(x);
        Ok(mean.iter().map(|v| v + theta[0]).collect())
    }

    fn observation_sd(&self, _theta: &[f64]) -> Vec<f64> {
        self.r.clone()
    }

    fn observation_link(&self) -> ObsLink {
        ObsLink::Identity
    }

    fn theta_prior(&self) -> &Prior {
        &self.theta_prior
    }

    fn x0_prior(&self) -> &Prior {
        &self.x0_prior
    }

    fn default_factorization(&self) -> Factorization {
        self.factorization
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::normal_log_density;

    #[test]
    fn kalman_single_step_by_hand() {
        let m = LinearGaussianModel::scalar(0.5, 2.0, 0.5);
        let m0 = DVector::from_element(1, 1.0);
        let p0 = DMatrix::from_element(1, 1, 4.0);
        // x1 ~ N(0.5, 0.25 * 4 + 4) = N(0.5, 5); y1 ~ N(0.5 + c, 5.25).
        let ll = m
            .kalman_log_likelihood(&[vec![1.7]], &m0, &p0, &[0.2])
            .unwrap();
        assert!((ll - normal_log_density(1.7, 0.7, 5.25f64.sqrt())).abs() < 1e-13);
    }

    #[test]
    fn kalman_matches_dense_marginal() {
        let m = LinearGaussianModel::scalar(0.8, 0.6, 0.3);
        let y = [0.4, -0.1, 0.9];
        let c = 0.1;
        // y_t = 0.8^t x0 + sum_s 0.8^{t-s} 0.6 u_s + c + 0.3 e_t with x0 ~ N(0, 1).
        let n = y.len();
        let mut cov = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let (ti, tj) = (i as i32 + 1, j as i32 + 1);
                let mut v = 0.8f64.powi(ti + tj);
                for s in 1..=ti.min(tj) {
                    v += 0.36 * 0.8f64.powi(ti - s) * 0.8f64.powi(tj - s);
                }
                if i == j {
                    v += 0.09;
                }
                cov[(i, j)] = v;
            }
        }
        let l = cov.clone().cholesky().unwrap();
        let resid = DVector::from_iterator(n, y.iter().map(|v| v - c));
        let quad = resid.dot(&l.solve(&resid));
        let logdet: f64 = l.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let exact = -0.5 * (quad + logdet + n as f64 * (2.0 * std::f64::consts::PI).ln());

        let ys: Vec<Vec<f64>> = y.iter().map(|v| vec![*v]).collect();
        let (m0, p0) = m.x0_moments();
        let ll = m.kalman_log_likelihood(&ys, &m0, &p0, &[c]).unwrap();
        assert!((ll - exact).abs() < 1e-12);
    }

    #[test]
    fn missing_observation_skipped() {
        let m = LinearGaussianModel::scalar(0.9, 1.0, 1.0);
        let (m0, p0) = m.x0_moments();
        let full = m
            .kalman_log_likelihood(&[vec![0.3], vec![f64::NAN]], &m0, &p0, &[0.0])
            .unwrap();
        let one = m
            .kalman_log_likelihood(&[vec![0.3]], &m0, &p0, &[0.0])
            .unwrap();
        assert_eq!(full, one);
    }
}
