//! Joint UKF over `(x_t, θ)` followed by an unscented RTS smoother.
//!
//! The smoother follows Särkkä (2008), "Unscented Rauch-Tung-Striebel
//! smoother". States and parameters are carried in the unconstrained
//! coordinates of their priors.

use nalgebra::{DMatrix, DVector};

use super::transform::{
    condition_moments, sigma_points, transform_from_images, GaussianBelief, UtParams,
};
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, CholeskyFactor};
use crate::model::{Factorization, StateSpaceModel};

#[derive(Debug, Clone, PartialEq)]
pub struct JointUkf {
    pub n_x: usize,
    /// Filtered beliefs over `(x_t, θ)` for `t = 0..=T`.
    pub filtered: Vec<GaussianBelief>,
    /// Smoothed belief over `(x_0, θ)`.
    pub smoothed0: GaussianBelief,
}

impl JointUkf {
    pub fn theta_belief(&self) -> Result<GaussianBelief> {
        let n = self.smoothed0.dim();
        self.smoothed0.marginal(self.n_x, n - self.n_x)
    }

    /// Belief over the PMMH coordinates: `(x_0, θ)` when `x_0` is sampled by
    /// the chain, `θ` alone otherwise.
    pub fn chain_belief(&self, factorization: Factorization) -> Result<GaussianBelief> {
        match factorization {
            Factorization::X0InChain => Ok(self.smoothed0.clone()),
            Factorization::X0InFilter => self.theta_belief(),
        }
    }
}

/// Prior over `(x_0, θ)` in unconstrained coordinates, moment matched.
pub fn joint_prior<M: StateSpaceModel + ?Sized>(model: &M) -> Result<GaussianBelief> {
    let (mx, vx) = model.x0_prior().unconstrained_moments();
    let (mt, vt) = model.theta_prior().unconstrained_moments();
    let mean = DVector::from_iterator(mx.len() + mt.len(), mx.into_iter().chain(mt));
    let sd: Vec<f64> = vx.into_iter().chain(vt).map(f64::sqrt).collect();
    GaussianBelief::new(mean, CholeskyFactor::from_sd(&sd))
}

pub fn joint_ukf_init<M: StateSpaceModel + ?Sized>(
    model: &M,
    y: &[Vec<f64>],
    p: &UtParams,
) -> Result<JointUkf> {
    let d = model.dims();
    let n_s = d.n_x + d.n_theta;
    let x_prior = model.x0_prior();
    let th_prior = model.theta_prior();
    let link = model.observation_link();

    let start = joint_prior(model)?;
    let mut filtered = vec![start.clone()];
    let mut m = start.mean.clone();
    let mut cov = start.covariance();
    let mut pred: Vec<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> = Vec::with_capacity(y.len());

    for (k, yt) in y.iter().enumerate() {
        let time = k + 1;
        let diverged = |_| Error::Divergence { time };
        if yt.len() != d.n_y {
            return Err(Error::Dimension {
                what: "observation",
                expected: d.n_y,
                got: yt.len(),
            });
        }

        // Predict through (s_{t-1}, u_t).
        let ls = factor_any(&cov).map_err(diverged)?;
        let mut l_aug = DMatrix::zeros(n_s + d.n_u, n_s + d.n_u);
        l_aug.view_mut((0, 0), (n_s, n_s)).copy_from(ls.matrix());
        l_aug
            .view_mut((n_s, n_s), (d.n_u, d.n_u))
            .fill_with_identity();
        let mut mean_aug = DVector::zeros(n_s + d.n_u);
        mean_aug.rows_mut(0, n_s).copy_from(&m);
        let aug = GaussianBelief::new(mean_aug, CholeskyFactor::from_lower(l_aug)?)?;
        let set = sigma_points(&aug, p)?;
        let cols = (0..set.len())
            .map(|j| {
                let col = set.points.column(j);
                let x = x_prior.from_unconstrained(col.rows(0, d.n_x).as_slice());
                let th_unc: Vec<f64> = col.rows(d.n_x, d.n_theta).iter().copied().collect();
                let th = th_prior.from_unconstrained(&th_unc);
                let u: Vec<f64> = col.rows(n_s, d.n_u).iter().copied().collect();
                let xn = model.transition(&u, &x, &th)?;
                let mut out = DVector::zeros(n_s);
                out.rows_mut(0, d.n_x)
                    .copy_from_slice(&x_prior.to_unconstrained(&xn));
                out.rows_mut(d.n_x, d.n_theta).copy_from_slice(&th_unc);
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(diverged)?;
        let images = DMatrix::from_columns(&cols);
        if images.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time });
        }
        let ut = transform_from_images(&set, &aug.mean, &images);
        let m_pred = ut.mean;
        let p_pred = ut.cov;
        let c_cross = ut.cross.rows(0, n_s).into_owned();
        pred.push((m_pred.clone(), p_pred.clone(), c_cross));

        // Update on the observed entries.
        let idx: Vec<usize> = (0..d.n_y).filter(|&i| yt[i].is_finite()).collect();
        if idx.is_empty() {
            m = m_pred;
            cov = p_pred;
        } else {
            let z = DVector::from_vec(
                idx.iter()
                    .map(|&i| link.forward(yt[i]))
                    .collect::<Result<Vec<_>>>()?,
            );
            let belief =
                GaussianBelief::new(m_pred.clone(), factor_any(&p_pred).map_err(diverged)?)?;
            let set = sigma_points(&belief, p)?;
            let th_mean = th_prior.from_unconstrained(m_pred.rows(d.n_x, d.n_theta).as_slice());
            let sd = model.observation_sd(&th_mean);
            let cols = (0..set.len())
                .map(|j| {
                    let col = set.points.column(j);
                    let x = x_prior.from_unconstrained(col.rows(0, d.n_x).as_slice());
                    let th = th_prior.from_unconstrained(col.rows(d.n_x, d.n_theta).as_slice());
                    let ym = model.observation_mean(&x, &th)?;
                    Ok(DVector::from_iterator(
                        idx.len(),
                        idx.iter().map(|&i| ym[i]),
                    ))
                })
                .collect::<Result<Vec<_>>>()
                .map_err(diverged)?;
            let images = DMatrix::from_columns(&cols);
            if images.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { time });
            }
            let ut = transform_from_images(&set, &m_pred, &images);
            let mut s = ut.cov;
            for (k, &i) in idx.iter().enumerate() {
                s[(k, k)] += sd[i] * sd[i];
            }
            let c = condition_moments(&m_pred, &ut.mean, &p_pred, &ut.cross, &s, &z)
                .map_err(diverged)?;
            m = c.belief.mean.clone();
            cov = c.belief.covariance();
        }
        if m.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time });
        }
        filtered.push(GaussianBelief::new(
            m.clone(),
            factor_any(&cov).map_err(diverged)?,
        )?);
    }

    // Backward pass.
    let mut ms = m;
    let mut ps = cov;
    for k in (0..y.len()).rev() {
        let (m_pred, p_pred, c_cross) = &pred[k];
        let f = &filtered[k];
        let lp = factor_any(p_pred).map_err(|_| Error::Divergence { time: k + 1 })?;
        let gain = ridge_solve(&lp, p_pred, &c_cross.transpose())?.transpose();
        ms = &f.mean + &gain * (&ms - m_pred);
        ps = symmetrize(&(f.covariance() + &gain * (&ps - p_pred) * gain.transpose()));
        if ms.iter().chain(ps.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: k });
        }
    }
    let smoothed0 = GaussianBelief::from_covariance(ms, &ps)?;
    Ok(JointUkf {
        n_x: d.n_x,
        filtered,
        smoothed0,
    })
}

fn factor_any(cov: &DMatrix<f64>) -> Result<CholeskyFactor> {
    CholeskyFactor::factor(cov).or_else(|_| CholeskyFactor::factor_psd(cov, 1e-12))
}

/// `P⁻¹ b`, adding a small ridge when `P` is only semidefinite.
fn ridge_solve(l: &CholeskyFactor, p: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if l.is_definite() {
        return l.solve(b);
    }
    let n = p.nrows();
    let scale = p
        .diagonal()
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(1e-300);
    let reg = p + DMatrix::identity(n, n) * (1e-10 * scale);
    CholeskyFactor::factor(&reg)?.solve(b)
}
