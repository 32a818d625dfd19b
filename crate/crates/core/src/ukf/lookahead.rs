//! UKF look-aheads used as particle filter proposals.
//!
//! States enter the unscented transforms in the unconstrained coordinates of
//! the model's `x0` prior (log for log-normal components), so positive
//! quantities stay positive at every sigma point.

use nalgebra::{DMatrix, DVector};

use super::transform::{
    condition_moments, sigma_points, transform_from_images, GaussianBelief, UtParams,
};
use crate::error::{Error, Result};
use crate::linalg::{chol_rank1_downdate, symmetrize, CholeskyFactor};
use crate::model::{Dims, StateSpaceModel};

/// Marginal look-ahead output.
#[derive(Debug, Clone, PartialEq)]
pub struct MupfLookahead {
    /// Proposal for `u_t` shared by all particles.
    pub u_proposal: GaussianBelief,
    /// Belief over `x_t` in unconstrained coordinates, for the next step.
    pub x_belief: GaussianBelief,
    /// Pilot noise value, the proposal mean.
    pub mu_hat: Vec<f64>,
    /// The proposal reverted to `N(0, I)`.
    pub fallback: bool,
}

/// Per-particle conditional look-ahead output.
#[derive(Debug, Clone, PartialEq)]
pub struct CupfConditional {
    pub u_proposal: GaussianBelief,
    /// `ln p̂(y_t | x_{t-1})` on the observation scale.
    pub log_pred_y: f64,
    pub fallback: bool,
}

pub fn mupf_sigma_count(d: Dims) -> usize {
    2 * (d.n_u + d.n_x + d.n_y) + 1
}

pub fn cupf_sigma_count(d: Dims) -> usize {
    2 * (d.n_u + d.n_y) + 1
}

/// Indices of finite observation entries, their linked values, and the
/// summed log-Jacobian of the link.
fn linked_observation<M: StateSpaceModel + ?Sized>(
    model: &M,
    y: &[f64],
) -> Result<(Vec<usize>, DVector<f64>, f64)> {
    let link = model.observation_link();
    let idx: Vec<usize> = (0..y.len()).filter(|&i| y[i].is_finite()).collect();
    let z = idx
        .iter()
        .map(|&i| link.forward(y[i]))
        .collect::<Result<Vec<_>>>()?;
    let jac = idx.iter().map(|&i| link.log_jacobian(y[i])).sum();
    Ok((idx, DVector::from_vec(z), jac))
}

fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, at), (b.nrows(), b.ncols())).copy_from(b);
        at += b.nrows();
    }
    out
}

fn check_y<M: StateSpaceModel + ?Sized>(model: &M, y: &[f64]) -> Result<()> {
    let n_y = model.dims().n_y;
    if y.len() != n_y {
        return Err(Error::Dimension {
            what: "observation",
            expected: n_y,
            got: y.len(),
        });
    }
    Ok(())
}

/// Joint UT over `(u_t, x_{t-1}, e_t)` and conditioning on `y_t`.
///
/// `x_belief` is over `x_{t-1}` in unconstrained coordinates. On any failure
/// the proposal reverts to `N(0, I)`, the returned x belief is the
/// unconditioned prediction when that is available (otherwise the input), and
/// `fallback` is set.
pub fn mupf_lookahead<M: StateSpaceModel + ?Sized>(
    model: &M,
    x_belief: &GaussianBelief,
    theta: &[f64],
    y_t: &[f64],
    p: &UtParams,
) -> Result<MupfLookahead> {
    check_y(model, y_t)?;
    let d = model.dims();
    if x_belief.dim() != d.n_x {
        return Err(Error::Dimension {
            what: "x belief",
            expected: d.n_x,
            got: x_belief.dim(),
        });
    }
    let (idx, z_obs, _) = linked_observation(model, y_t)?;
    let prior = model.x0_prior();
    let sd = model.observation_sd(theta);

    let mut mean = DVector::zeros(d.n_u + d.n_x + d.n_y);
    mean.rows_mut(d.n_u, d.n_x).copy_from(&x_belief.mean);
    let l = block_diag(&[
        &DMatrix::identity(d.n_u, d.n_u),
        x_belief.chol.matrix(),
        CholeskyFactor::from_sd(&sd).matrix(),
    ]);
    let aug = GaussianBelief::new(mean, CholeskyFactor::from_lower(l)?)?;
    let set = sigma_points(&aug, p)?;

    let n_out = d.n_u + d.n_x + idx.len();
    let image = |j: usize| -> Result<DVector<f64>> {
        let col = set.points.column(j);
        let u: Vec<f64> = col.rows(0, d.n_u).iter().copied().collect();
        let x_unc: Vec<f64> = col.rows(d.n_u, d.n_x).iter().copied().collect();
        let x = prior.from_unconstrained(&x_unc);
        let xn = model.transition(&u, &x, theta)?;
        let xn_unc = prior.to_unconstrained(&xn);
        let ym = model.observation_mean(&xn, theta)?;
        let mut out = DVector::zeros(n_out);
        out.rows_mut(0, d.n_u).copy_from_slice(&u);
        out.rows_mut(d.n_u, d.n_x).copy_from_slice(&xn_unc);
        for (k, &i) in idx.iter().enumerate() {
            out[d.n_u + d.n_x + k] = ym[i] + col[d.n_u + d.n_x + i];
        }
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::IntegrationFailure)
        }
    };
    let images: Result<Vec<DVector<f64>>> = (0..set.len()).map(image).collect();
    let images = match images {
        Ok(v) => DMatrix::from_columns(&v),
        Err(_) => return Ok(fallback(d, x_belief.clone())),
    };
    let ut = transform_from_images(&set, &aug.mean, &images);
    let n_a = d.n_u + d.n_x;
    let mean_a = ut.mean.rows(0, n_a).into_owned();
    let cov_aa = ut.cov.view((0, 0), (n_a, n_a)).into_owned();

    let predicted = || {
        GaussianBelief::from_covariance(
            mean_a.rows(d.n_u, d.n_x).into_owned(),
            &cov_aa.view((d.n_u, d.n_u), (d.n_x, d.n_x)).into_owned(),
        )
    };
    if idx.is_empty() {
        return Ok(match predicted() {
            Ok(x_next) => MupfLookahead {
                u_proposal: GaussianBelief::standard(d.n_u),
                x_belief: x_next,
                mu_hat: vec![0.0; d.n_u],
                fallback: false,
            },
            Err(_) => fallback(d, x_belief.clone()),
        });
    }
    let n_o = idx.len();
    let conditioned = condition_moments(
        &mean_a,
        &ut.mean.rows(n_a, n_o).into_owned(),
        &cov_aa,
        &ut.cov.view((0, n_a), (n_a, n_o)).into_owned(),
        &ut.cov.view((n_a, n_a), (n_o, n_o)).into_owned(),
        &z_obs,
    );
    let conditioned = match conditioned {
        Ok(c) => c,
        Err(_) => {
            let x_next = predicted().unwrap_or_else(|_| x_belief.clone());
            return Ok(fallback(d, x_next));
        }
    };
    let joint = conditioned.belief;
    let u_proposal = joint.marginal(0, d.n_u);
    let x_next = joint.marginal(d.n_u, d.n_x);
    match (u_proposal, x_next) {
        (Ok(u), Ok(x)) if u.chol.is_definite() => Ok(MupfLookahead {
            mu_hat: u.mean.iter().copied().collect(),
            u_proposal: u,
            x_belief: x,
            fallback: false,
        }),
        (_, Ok(x)) => Ok(fallback(d, x)),
        _ => Ok(fallback(
            d,
            predicted().unwrap_or_else(|_| x_belief.clone()),
        )),
    }
}

fn fallback(d: Dims, x_belief: GaussianBelief) -> MupfLookahead {
    MupfLookahead {
        u_proposal: GaussianBelief::standard(d.n_u),
        x_belief,
        mu_hat: vec![0.0; d.n_u],
        fallback: true,
    }
}

/// Factor of `I − W Wᵀ` by successive rank-1 downdates of the identity.
/// Returns the factor and whether the full-factorization fallback was used.
pub fn identity_downdate(w: &DMatrix<f64>) -> Result<(CholeskyFactor, bool)> {
    let mut l = CholeskyFactor::identity(w.nrows());
    for j in 0..w.ncols() {
        match chol_rank1_downdate(&l, &w.column(j).into_owned()) {
            Ok(next) => l = next,
            Err(_) => return Ok((identity_minus_outer_full(w)?, true)),
        }
    }
    Ok((l, false))
}

/// Factor of `I − W Wᵀ` formed explicitly.
pub fn identity_minus_outer_full(w: &DMatrix<f64>) -> Result<CholeskyFactor> {
    let n = w.nrows();
    let cov = symmetrize(&(DMatrix::identity(n, n) - w * w.transpose()));
    CholeskyFactor::factor(&cov)
}

/// UT over `(u_t, e_t)` from a known `x_{t-1}` and conditioning on `y_t`.
///
/// The prior covariance of `u_t` is the identity, so the conditional factor
/// is a sequence of rank-1 downdates of `I`. `x_prev` is on the natural scale.
pub fn cupf_conditional<M: StateSpaceModel + ?Sized>(
    model: &M,
    x_prev: &[f64],
    theta: &[f64],
    y_t: &[f64],
    p: &UtParams,
) -> Result<CupfConditional> {
    check_y(model, y_t)?;
    let d = model.dims();
    if x_prev.len() != d.n_x {
        return Err(Error::Dimension {
            what: "state",
            expected: d.n_x,
            got: x_prev.len(),
        });
    }
    let (idx, z_obs, jac) = linked_observation(model, y_t)?;
    if idx.is_empty() {
        return Ok(CupfConditional {
            u_proposal: GaussianBelief::standard(d.n_u),
            log_pred_y: 0.0,
            fallback: false,
        });
    }
    match cupf_attempt(model, x_prev, theta, p, &idx, &z_obs) {
        Ok((u_proposal, log_pred)) => Ok(CupfConditional {
            u_proposal,
            log_pred_y: log_pred + jac,
            fallback: false,
        }),
        Err(_) => {
            let zero = vec![0.0; d.n_u];
            let pilot = model
                .transition(&zero, x_prev, theta)
                .and_then(|x| model.obs_log_density(y_t, &x, theta))
                .ok()
                .filter(|v| v.is_finite())
                .unwrap_or(0.0);
            Ok(CupfConditional {
                u_proposal: GaussianBelief::standard(d.n_u),
                log_pred_y: pilot,
                fallback: true,
            })
        }
    }
}

fn cupf_attempt<M: StateSpaceModel + ?Sized>(
    model: &M,
    x_prev: &[f64],
    theta: &[f64],
    p: &UtParams,
    idx: &[usize],
    z_obs: &DVector<f64>,
) -> Result<(GaussianBelief, f64)> {
    let d = model.dims();
    let sd = model.observation_sd(theta);
    let l = block_diag(&[
        &DMatrix::identity(d.n_u, d.n_u),
        CholeskyFactor::from_sd(&sd).matrix(),
    ]);
    let aug = GaussianBelief::new(
        DVector::zeros(d.n_u + d.n_y),
        CholeskyFactor::from_lower(l)?,
    )?;
    let set = sigma_points(&aug, p)?;
    let cols = (0..set.len())
        .map(|j| {
            let col = set.points.column(j);
            let u: Vec<f64> = col.rows(0, d.n_u).iter().copied().collect();
            let xn = model.transition(&u, x_prev, theta)?;
            let ym = model.observation_mean(&xn, theta)?;
            let out =
                DVector::from_iterator(idx.len(), idx.iter().map(|&i| ym[i] + col[d.n_u + i]));
            if out.iter().all(|v| v.is_finite()) {
                Ok(out)
            } else {
                Err(Error::IntegrationFailure)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let ut = transform_from_images(&set, &aug.mean, &DMatrix::from_columns(&cols));
    let ls = CholeskyFactor::factor(&ut.cov).map_err(|_| Error::SingularObservation)?;
    let c_uy = ut.cross.rows(0, d.n_u).into_owned();
    let w = ls.solve_lower(&c_uy.transpose())?.transpose();
    let resid = z_obs - &ut.mean;
    let white = ls.solve_lower(&DMatrix::from_column_slice(
        resid.len(),
        1,
        resid.as_slice(),
    ))?;
    let mean = &w * white.column(0);
    let (chol, _) = identity_downdate(&w)?;
    let log_pred = -0.5 * white.norm_squared()
        - ls.log_det()
        - 0.5 * idx.len() as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok((GaussianBelief::new(mean, chol)?, log_pred))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LinearGaussianModel;
    use crate::rng::{draw_stream, RngStream};

    /// Exact conditional of `u_t` given `y_t` for the linear model with
    /// `x_{t-1} ~ N(m, P)`: `y = H(A x + B u) + c + r e`.
    fn kalman_u_conditional(
        m: &LinearGaussianModel,
        mx: &DVector<f64>,
        px: &DMatrix<f64>,
        c: f64,
        y: &DVector<f64>,
    ) -> (DVector<f64>, DMatrix<f64>, f64) {
        let hb = &m.h * &m.b;
        let ha = &m.h * &m.a;
        let mut s = &ha * px * ha.transpose() + &hb * hb.transpose();
        for i in 0..m.r.len() {
            s[(i, i)] += m.r[i] * m.r[i];
        }
        let ym = &ha * mx + DVector::from_element(y.len(), c);
        let s_inv = s.clone().try_inverse().unwrap();
        let gain = hb.transpose() * &s_inv;
        let mean = &gain * (y - &ym);
        let cov = DMatrix::identity(m.b.ncols(), m.b.ncols()) - &gain * &hb;
        let resid = y - &ym;
        let logpred = -0.5
            * (resid.dot(&(&s_inv * &resid))
                + s.determinant().ln()
                + y.len() as f64 * (2.0 * std::f64::consts::PI).ln());
        (mean, cov, logpred)
    }

    fn model_2d() -> LinearGaussianModel {
        LinearGaussianModel::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.2, 0.7]),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.3, 0.4]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
            vec![0.3],
        )
        .unwrap()
    }

    #[test]
    fn sigma_counts() {
        let d = Dims {
            n_x: 3,
            n_u: 1,
            n_theta: 2,
            n_y: 1,
        };
        assert_eq!(mupf_sigma_count(d), 11);
        assert_eq!(cupf_sigma_count(d), 5);
    }

    #[test]
    fn mupf_matches_kalman() {
        let m = model_2d();
        let mx = DVector::from_vec(vec![0.4, -0.3]);
        let px = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        let b = GaussianBelief::from_covariance(mx.clone(), &px).unwrap();
        let y = DVector::from_vec(vec![0.8]);
        let out = mupf_lookahead(&m, &b, &[0.2], y.as_slice(), &UtParams::default()).unwrap();
        let (mean, cov, _) = kalman_u_conditional(&m, &mx, &px, 0.2, &y);
        assert!(!out.fallback);
        assert!((&out.u_proposal.mean - mean).amax() < 1e-8);
        assert!((out.u_proposal.covariance() - cov).amax() < 1e-8);
        assert_eq!(
            out.mu_hat,
            out.u_proposal.mean.iter().copied().collect::<Vec<_>>()
        );
    }

    #[test]
    fn cupf_matches_kalman() {
        let m = model_2d();
        let x = [0.4, -0.3];
        let y = DVector::from_vec(vec![0.8]);
        let out = cupf_conditional(&m, &x, &[0.2], y.as_slice(), &UtParams::default()).unwrap();
        let (mean, cov, lp) = kalman_u_conditional(
            &m,
            &DVector::from_column_slice(&x),
            &DMatrix::zeros(2, 2),
            0.2,
            &y,
        );
        assert!((&out.u_proposal.mean - mean).amax() < 1e-8);
        assert!((out.u_proposal.covariance() - cov).amax() < 1e-8);
        assert!((out.log_pred_y - lp).abs() < 1e-8);
    }

    #[test]
    fn mupf_and_cupf_agree_at_a_point() {
        let m = model_2d();
        let x = DVector::from_vec(vec![1.0, 0.5]);
        let y = [0.1];
        let a = mupf_lookahead(
            &m,
            &GaussianBelief::point(x.clone()),
            &[0.0],
            &y,
            &UtParams::default(),
        )
        .unwrap();
        let b = cupf_conditional(&m, x.as_slice(), &[0.0], &y, &UtParams::default()).unwrap();
        assert!((&a.u_proposal.mean - &b.u_proposal.mean).amax() < 1e-8);
        assert!((a.u_proposal.covariance() - b.u_proposal.covariance()).amax() < 1e-8);
    }

    #[test]
    fn uninformative_observation() {
        // B = 0: the observation carries nothing about u.
        let m = LinearGaussianModel::new(
            DMatrix::identity(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::identity(1, 1),
            vec![0.5],
        )
        .unwrap();
        let b = GaussianBelief::from_covariance(
            DVector::from_element(1, 0.3),
            &DMatrix::identity(1, 1),
        )
        .unwrap();
        let out = mupf_lookahead(&m, &b, &[0.0], &[1.0], &UtParams::default()).unwrap();
        assert!(out.u_proposal.mean.amax() < 1e-14);
        assert!((out.u_proposal.covariance() - DMatrix::identity(1, 1)).amax() < 1e-14);

        let c = cupf_conditional(&m, &[0.3], &[0.0], &[1.0], &UtParams::default()).unwrap();
        assert!(c.u_proposal.mean.amax() < 1e-14);
        let expect = crate::prior::normal_log_density(1.0, 0.3, 0.5);
        assert!((c.log_pred_y - expect).abs() < 1e-12);
    }

    #[test]
    fn downdate_matches_full_factorization() {
        let root = RngStream::new(11, &[]);
        for case in 0..50u64 {
            let s = root.child(case);
            let n_u = 1 + (case % 4) as usize;
            let n_y = 1 + (case % 3) as usize;
            let raw = draw_stream(&s, n_u * n_y);
            let mut w = DMatrix::from_column_slice(n_u, n_y, &raw);
            // Scale so that I − W Wᵀ stays comfortably positive definite.
            let norm = w.norm();
            w *= 0.9 / norm.max(1.0);
            let (fast, used_fallback) = identity_downdate(&w).unwrap();
            let full = identity_minus_outer_full(&w).unwrap();
            assert!(!used_fallback);
            assert!((fast.matrix() - full.matrix()).amax() < 1e-8);
        }
    }

    #[test]
    fn missing_observation_gives_prior() {
        let m = model_2d();
        let c =
            cupf_conditional(&m, &[0.0, 0.0], &[0.0], &[f64::NAN], &UtParams::default()).unwrap();
        assert_eq!(c.u_proposal, GaussianBelief::standard(2));
        assert_eq!(c.log_pred_y, 0.0);
    }
}
