use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, CholeskyFactor};

/// Mean and lower Cholesky factor of a Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub chol: CholeskyFactor,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, chol: CholeskyFactor) -> Result<Self> {
        if mean.len() != chol.dim() {
            return Err(Error::Dimension {
                what: "belief factor",
                expected: mean.len(),
                got: chol.dim(),
            });
        }
        Ok(Self { mean, chol })
    }

    pub fn standard(n: usize) -> Self {
        Self {
            mean: DVector::zeros(n),
            chol: CholeskyFactor::identity(n),
        }
    }

    /// Point mass at `mean`.
    pub fn point(mean: DVector<f64>) -> Self {
        let n = mean.len();
        Self {
            mean,
            chol: CholeskyFactor::zeros(n),
        }
    }

    /// Factorizes `cov`, accepting semidefinite matrices.
    pub fn from_covariance(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let chol =
            CholeskyFactor::factor(cov).or_else(|_| CholeskyFactor::factor_psd(cov, 1e-12))?;
        Self::new(mean, chol)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.covariance()
    }

    /// Marginal over `start..start + len`.
    pub fn marginal(&self, start: usize, len: usize) -> Result<Self> {
        Ok(Self {
            mean: self.mean.rows(start, len).into_owned(),
            chol: self.chol.sub_factor(start, len)?,
        })
    }
}

/// Scaled unscented transform tuning. `kappa = None` means `max(3 − n, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UtParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: Option<f64>,
}

impl Default for UtParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 2.0,
            kappa: None,
        }
    }
}

impl UtParams {
    pub fn kappa_for(&self, n: usize) -> f64 {
        self.kappa.unwrap_or((3.0 - n as f64).max(0.0))
    }

    pub fn lambda(&self, n: usize) -> f64 {
        let n = n as f64;
        self.alpha * self.alpha * (n + self.kappa_for(n as usize)) - n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPointSet {
    /// One point per column, `2n + 1` columns.
    pub points: DMatrix<f64>,
    pub mean_weights: DVector<f64>,
    pub cov_weights: DVector<f64>,
}

impl SigmaPointSet {
    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    pub fn weighted_mean(&self, values: &DMatrix<f64>) -> DVector<f64> {
        values * &self.mean_weights
    }

    /// `Σ_i Wc_i (a_i − ā)(b_i − b̄)ᵀ`.
    pub fn weighted_cross(
        &self,
        a: &DMatrix<f64>,
        a_mean: &DVector<f64>,
        b: &DMatrix<f64>,
        b_mean: &DVector<f64>,
    ) -> DMatrix<f64> {
        let mut da = a.clone();
        let mut db = b.clone();
        for j in 0..a.ncols() {
            let mut col = da.column_mut(j);
            col -= a_mean;
            col *= self.cov_weights[j];
            let mut col = db.column_mut(j);
            col -= b_mean;
        }
        da * db.transpose()
    }
}

pub fn sigma_points(b: &GaussianBelief, p: &UtParams) -> Result<SigmaPointSet> {
    let n = b.dim();
    if n == 0 {
        return Err(Error::Dimension {
            what: "belief",
            expected: 1,
            got: 0,
        });
    }
    let lambda = p.lambda(n);
    let c = n as f64 + lambda;
    if !(c > 0.0) {
        return Err(Error::InvalidTuning(c));
    }
    let scale = c.sqrt();
    let l = b.chol.matrix();
    let mut points = DMatrix::zeros(n, 2 * n + 1);
    points.set_column(0, &b.mean);
    for i in 0..n {
        let d = l.column(i) * scale;
        points.set_column(1 + i, &(&b.mean + &d));
        points.set_column(1 + n + i, &(&b.mean - &d));
    }
    let wi = 1.0 / (2.0 * c);
    let mut mean_weights = DVector::from_element(2 * n + 1, wi);
    let mut cov_weights = mean_weights.clone();
    mean_weights[0] = lambda / c;
    cov_weights[0] = lambda / c + (1.0 - p.alpha * p.alpha + p.beta);
    Ok(SigmaPointSet {
        points,
        mean_weights,
        cov_weights,
    })
}

/// UT estimates of `E[g]`, `Cov[g]` and `Cov[input, g]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UtOutput {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub cross: DMatrix<f64>,
}

pub fn unscented_transform<G>(b: &GaussianBelief, p: &UtParams, g: G) -> Result<UtOutput>
where
    G: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let set = sigma_points(b, p)?;
    let cols = (0..set.len())
        .map(|j| g(&set.points.column(j).into_owned()))
        .collect::<Result<Vec<_>>>()?;
    let out = DMatrix::from_columns(&cols);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::IntegrationFailure);
    }
    Ok(transform_from_images(&set, &b.mean, &out))
}

pub(crate) fn transform_from_images(
    set: &SigmaPointSet,
    in_mean: &DVector<f64>,
    out: &DMatrix<f64>,
) -> UtOutput {
    let mean = set.weighted_mean(out);
    let cov = symmetrize(&set.weighted_cross(out, &mean, out, &mean));
    let cross = set.weighted_cross(&set.points, in_mean, out, &mean);
    UtOutput { mean, cov, cross }
}

/// Result of Gaussian conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioned {
    pub belief: GaussianBelief,
    /// The conditional covariance lost rank.
    pub degenerate: bool,
    /// `ln N(y; m_y, S_yy)` at the conditioning value.
    pub log_pred: f64,
}

/// Conditions a joint Gaussian over `(a, y)` with moments given blockwise.
pub fn condition_moments(
    mean_a: &DVector<f64>,
    mean_y: &DVector<f64>,
    cov_aa: &DMatrix<f64>,
    cov_ay: &DMatrix<f64>,
    cov_yy: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<Conditioned> {
    let ls = CholeskyFactor::factor(cov_yy).map_err(|_| Error::SingularObservation)?;
    let resid = y - mean_y;
    let resid_m = DMatrix::from_column_slice(resid.len(), 1, resid.as_slice());
    let white = ls
        .solve_lower(&resid_m)
        .map_err(|_| Error::SingularObservation)?;
    let gain_t = ls
        .solve(&cov_ay.transpose())
        .map_err(|_| Error::SingularObservation)?;
    let mean = mean_a + cov_ay * ls.solve(&resid_m)?.column(0);
    let cov = symmetrize(&(cov_aa - cov_ay * gain_t));
    let log_pred = -0.5 * white.norm_squared()
        - ls.log_det()
        - 0.5 * resid.len() as f64 * (2.0 * std::f64::consts::PI).ln();
    let (chol, degenerate) = factor_flagged(&cov, cov_aa)?;
    Ok(Conditioned {
        belief: GaussianBelief::new(mean, chol)?,
        degenerate,
        log_pred,
    })
}

/// Conditions a joint belief over `(a, y)`, `a` being the first `n_a` entries.
pub fn condition_on_observation(
    joint: &GaussianBelief,
    n_a: usize,
    y_obs: &[f64],
) -> Result<Conditioned> {
    let n = joint.dim();
    if n_a + y_obs.len() != n {
        return Err(Error::Dimension {
            what: "joint belief",
            expected: n_a + y_obs.len(),
            got: n,
        });
    }
    let n_y = y_obs.len();
    let cov = joint.covariance();
    condition_moments(
        &joint.mean.rows(0, n_a).into_owned(),
        &joint.mean.rows(n_a, n_y).into_owned(),
        &cov.view((0, 0), (n_a, n_a)).into_owned(),
        &cov.view((0, n_a), (n_a, n_y)).into_owned(),
        &cov.view((n_a, n_a), (n_y, n_y)).into_owned(),
        &DVector::from_column_slice(y_obs),
    )
}

/// Cholesky factor, falling back to a semidefinite factor flagged degenerate.
/// Pivots are judged against the diagonal of `reference`.
pub(crate) fn factor_flagged(
    cov: &DMatrix<f64>,
    reference: &DMatrix<f64>,
) -> Result<(CholeskyFactor, bool)> {
    let scale = reference
        .diagonal()
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()));
    match CholeskyFactor::factor(cov) {
        Ok(l) if l.matrix().diagonal().iter().all(|d| d * d > 1e-12 * scale) => Ok((l, false)),
        _ => Ok((
            CholeskyFactor::factor_psd(cov, 1e-10 * scale / cov_scale(cov))?,
            true,
        )),
    }
}

fn cov_scale(cov: &DMatrix<f64>) -> f64 {
    cov.diagonal()
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()))
        .max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn belief(mean: &[f64], cov: &[f64]) -> GaussianBelief {
        let n = mean.len();
        GaussianBelief::from_covariance(
            DVector::from_column_slice(mean),
            &DMatrix::from_row_slice(n, n, cov),
        )
        .unwrap()
    }

    #[test]
    fn scalar_points() {
        let set = sigma_points(&GaussianBelief::standard(1), &UtParams::default()).unwrap();
        let pts: Vec<f64> = set.points.iter().copied().collect();
        assert_eq!(pts[0], 0.0);
        assert!((pts[1] - 3f64.sqrt()).abs() < 1e-15);
        assert!((pts[2] + 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn reproduces_moments() {
        let b = belief(
            &[1.0, -2.0, 0.5],
            &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5],
        );
        for p in [
            UtParams::default(),
            UtParams {
                alpha: 0.5,
                beta: 2.0,
                kappa: Some(1.0),
            },
        ] {
            let set = sigma_points(&b, &p).unwrap();
            assert_eq!(set.len(), 7);
            let m = set.weighted_mean(&set.points);
            assert!((&m - &b.mean).amax() < 1e-14);
            let c = set.weighted_cross(&set.points, &b.mean, &set.points, &b.mean);
            assert!((c - b.covariance()).amax() < 1e-12);
        }
    }

    #[test]
    fn bad_tuning() {
        let p = UtParams {
            alpha: 1.0,
            beta: 2.0,
            kappa: Some(-1.5),
        };
        assert!(matches!(
            sigma_points(&GaussianBelief::standard(1), &p),
            Err(Error::InvalidTuning(_))
        ));
    }

    #[test]
    fn square_has_unit_mean() {
        for kappa in [0.5, 2.0, 5.0] {
            let p = UtParams {
                alpha: 1.0,
                beta: 2.0,
                kappa: Some(kappa),
            };
            let out =
                unscented_transform(&GaussianBelief::standard(1), &p, |x| Ok(x.map(|v| v * v)))
                    .unwrap();
            assert!((out.mean[0] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn identity_map() {
        let b = belief(&[0.3, 0.7], &[1.0, 0.5, 0.5, 2.0]);
        let out = unscented_transform(&b, &UtParams::default(), |x| Ok(x.clone())).unwrap();
        assert!((&out.mean - &b.mean).amax() < 1e-14);
        assert!((&out.cov - b.covariance()).amax() < 1e-12);
    }

    #[test]
    fn non_finite_image_fails() {
        let out = unscented_transform(&GaussianBelief::standard(1), &UtParams::default(), |x| {
            Ok(x.map(|v| v.ln()))
        });
        assert!(out.is_err());
    }

    #[test]
    fn conditioning_by_hand() {
        // a ~ N(1, 2), y ~ N(0, 3), cov 1.2.
        let joint = belief(&[1.0, 0.0], &[2.0, 1.2, 1.2, 3.0]);
        let c = condition_on_observation(&joint, 1, &[0.9]).unwrap();
        assert!((c.belief.mean[0] - (1.0 + 1.2 / 3.0 * 0.9)).abs() < 1e-12);
        assert!((c.belief.covariance()[(0, 0)] - (2.0 - 1.44 / 3.0)).abs() < 1e-12);
        assert!(!c.degenerate);
    }

    #[test]
    fn independent_block_unchanged() {
        let joint = belief(
            &[1.0, 2.0, 0.0],
            &[2.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 4.0],
        );
        let c = condition_on_observation(&joint, 2, &[3.0]).unwrap();
        assert!((&c.belief.mean - joint.mean.rows(0, 2)).amax() < 1e-15);
        let cov = joint.covariance();
        assert!((c.belief.covariance() - cov.view((0, 0), (2, 2))).amax() < 1e-15);
    }

    #[test]
    fn perfect_correlation_is_degenerate() {
        let joint = belief(&[0.0, 0.0], &[1.0, 1.0 - 1e-15, 1.0 - 1e-15, 1.0]);
        let c = condition_on_observation(&joint, 1, &[0.5]).unwrap();
        assert!(c.degenerate);
        assert!(c.belief.covariance()[(0, 0)].abs() < 1e-10);
    }

    #[test]
    fn singular_observation_block() {
        let joint =
            GaussianBelief::new(DVector::zeros(2), CholeskyFactor::from_sd(&[1.0, 0.0])).unwrap();
        assert!(matches!(
            condition_on_observation(&joint, 1, &[0.0]),
            Err(Error::SingularObservation)
        ));
    }
}
