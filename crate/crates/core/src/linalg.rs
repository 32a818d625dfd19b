//! Lower-triangular Cholesky factors and the rank-1 downdate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lower-triangular `L` with `L Lᵀ` equal to the represented covariance.
///
/// Factors built with [`CholeskyFactor::factor`] have a strictly positive
/// diagonal. [`CholeskyFactor::factor_psd`] also admits zero pivots so that
/// point masses (for example a known initial state) can be carried as beliefs.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    l: DMatrix<f64>,
}

impl CholeskyFactor {
    pub fn identity(n: usize) -> Self {
        Self {
            l: DMatrix::identity(n, n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            l: DMatrix::zeros(n, n),
        }
    }

    /// Diagonal factor from standard deviations.
    pub fn from_sd(sd: &[f64]) -> Self {
        Self {
            l: DMatrix::from_diagonal(&DVector::from_column_slice(sd)),
        }
    }

    /// Wraps an existing lower-triangular matrix. The strict upper part is
    /// ignored; negative or non-finite diagonals are rejected.
    pub fn from_lower(l: DMatrix<f64>) -> Result<Self> {
        if !l.is_square() {
            return Err(Error::Dimension {
                what: "cholesky factor columns",
                expected: l.nrows(),
                got: l.ncols(),
            });
        }
        if l.diagonal().iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self {
            l: l.lower_triangle(),
        })
    }

    /// Factorizes a symmetric positive definite matrix.
    pub fn factor(cov: &DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::Dimension {
                what: "covariance columns",
                expected: cov.nrows(),
                got: cov.ncols(),
            });
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let sym = symmetrize(cov);
        let chol = nalgebra::Cholesky::new(sym).ok_or(Error::NotPositiveDefinite)?;
        let l = chol.unpack();
        if l.diagonal().iter().any(|d| !(*d > 0.0)) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { l })
    }

    /// Factorizes a symmetric positive semidefinite matrix. Pivots below
    /// `rel_tol` times the largest diagonal entry are treated as exact zeros
    /// and their column is zeroed.
    pub fn factor_psd(cov: &DMatrix<f64>, rel_tol: f64) -> Result<Self> {
        let n = cov.nrows();
        if cov.ncols() != n {
            return Err(Error::Dimension {
                what: "covariance columns",
                expected: n,
                got: cov.ncols(),
            });
        }
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let a = symmetrize(cov);
        let scale = a.diagonal().iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let tol = rel_tol * scale.max(f64::MIN_POSITIVE);
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d < -tol.max(1e-12 * scale) {
                return Err(Error::NotPositiveDefinite);
            }
            if d <= tol {
                continue;
            }
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.l
    }

    pub fn is_definite(&self) -> bool {
        self.l.diagonal().iter().all(|d| *d > 0.0)
    }

    /// `L Lᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.l * self.l.transpose()
    }

    /// `ln |L|`, i.e. half the log-determinant of the covariance.
    pub fn log_det(&self) -> f64 {
        self.l.diagonal().iter().map(|d| d.ln()).sum()
    }

    pub fn mul_vec(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.l * xi
    }

    /// Forward substitution, `L⁻¹ b`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if !self.is_definite() {
            return Err(Error::NotPositiveDefinite);
        }
        self.l
            .solve_lower_triangular(b)
            .ok_or(Error::NotPositiveDefinite)
    }

    /// `(L Lᵀ)⁻¹ b`.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let y = self.solve_lower(b)?;
        self.l
            .tr_solve_lower_triangular(&y)
            .ok_or(Error::NotPositiveDefinite)
    }

    /// Factor of the sub-covariance over `start..start + len`. A leading block
    /// is read off directly; any other block is refactorized.
    pub fn sub_factor(&self, start: usize, len: usize) -> Result<Self> {
        if start == 0 {
            return Ok(Self {
                l: self.l.view((0, 0), (len, len)).into_owned(),
            });
        }
        let cov = self.covariance();
        Self::factor_psd(&cov.view((start, start), (len, len)).into_owned(), 1e-14)
    }
}

/// Returns `L'` with `L' L'ᵀ = L Lᵀ − v vᵀ`.
///
/// Fails with [`Error::NotPositiveDefinite`] when the downdated matrix is not
/// positive definite; callers then refactorize the explicit matrix.
pub fn chol_rank1_downdate(factor: &CholeskyFactor, v: &DVector<f64>) -> Result<CholeskyFactor> {
    let n = factor.dim();
    if v.len() != n {
        return Err(Error::Dimension {
            what: "downdate vector",
            expected: n,
            got: v.len(),
        });
    }
    let mut l = factor.l.clone();
    let mut x = v.clone();
    for k in 0..n {
        let lkk = l[(k, k)];
        let r2 = lkk * lkk - x[k] * x[k];
        if !(r2 > 0.0) || !r2.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let r = r2.sqrt();
        let c = r / lkk;
        let s = x[k] / lkk;
        l[(k, k)] = r;
        for i in (k + 1)..n {
            let lik = (l[(i, k)] - s * x[i]) / c;
            l[(i, k)] = lik;
            x[i] = c * x[i] - s * lik;
        }
    }
    Ok(CholeskyFactor { l })
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{draw_stream, RngStream};

    fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
        let z = draw_stream(&RngStream::new(seed, &[n as u64]), n * n);
        let a = DMatrix::from_column_slice(n, n, &z);
        &a * a.transpose() + DMatrix::identity(n, n) * (n as f64)
    }

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).abs().max() / b.abs().max().max(1e-300)
    }

    #[test]
    fn reconstructs_covariance() {
        let s = random_spd(5, 1);
        let f = CholeskyFactor::factor(&s).unwrap();
        assert!(rel_err(&f.covariance(), &s) < 1e-12);
        assert!(f.is_definite());
    }

    #[test]
    fn zero_update_is_identity() {
        let f = CholeskyFactor::identity(2);
        let out = chol_rank1_downdate(&f, &DVector::zeros(2)).unwrap();
        assert_eq!(out.matrix(), &DMatrix::<f64>::identity(2, 2));
    }

    #[test]
    fn scalar_downdate() {
        let f = CholeskyFactor::identity(1);
        let out = chol_rank1_downdate(&f, &DVector::from_element(1, 0.6)).unwrap();
        assert!((out.matrix()[(0, 0)] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn downdate_matches_refactorization() {
        for seed in 0..20 {
            let s = random_spd(4, seed);
            let f = CholeskyFactor::factor(&s).unwrap();
            let v = DVector::from_vec(draw_stream(&RngStream::new(seed, &[99]), 4)) * 0.5;
            let down = chol_rank1_downdate(&f, &v).unwrap();
            let explicit = &s - &v * v.transpose();
            let oracle = CholeskyFactor::factor(&explicit).unwrap();
            assert!(rel_err(down.matrix(), oracle.matrix()) < 1e-10);
            assert!(rel_err(&down.covariance(), &explicit) < 1e-10);
        }
    }

    #[test]
    fn downdate_loses_definiteness() {
        let f = CholeskyFactor::identity(2);
        let v = DVector::from_vec(vec![1.0, 0.0]);
        assert!(matches!(
            chol_rank1_downdate(&f, &v),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn psd_factor_handles_zero_block() {
        let mut s = DMatrix::zeros(3, 3);
        s[(0, 0)] = 4.0;
        s[(2, 2)] = 9.0;
        s[(0, 2)] = 1.0;
        s[(2, 0)] = 1.0;
        let f = CholeskyFactor::factor_psd(&s, 1e-14).unwrap();
        assert!(!f.is_definite());
        assert!(rel_err(&f.covariance(), &s) < 1e-14);
        assert!(CholeskyFactor::factor(&s).is_err());
    }

    #[test]
    fn solves() {
        let s = random_spd(3, 5);
        let f = CholeskyFactor::factor(&s).unwrap();
        let b = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]);
        let x = f.solve(&b).unwrap();
        assert!(rel_err(&(&s * x), &b) < 1e-12);
        let half = 0.5 * s.determinant().ln();
        assert!((f.log_det() - half).abs() < 1e-12);
    }
}
