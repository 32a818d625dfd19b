use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, CholeskyFactor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rhat {
    pub value: f64,
    /// The within-chain covariance was singular and a ridge was added.
    pub regularized: bool,
}

/// Multivariate potential scale reduction factor (Brooks and Gelman, 1998)
/// on the second half of each chain:
///
/// ```text
/// R = (n − 1)/n + (K + 1)/K · λ_max(W⁻¹ B/n)
/// ```
///
/// `chains[k][t]` is the `t`-th draw of chain `k`.
pub fn rhat_multivariate(chains: &[Vec<Vec<f64>>]) -> Result<Rhat> {
    let k = chains.len();
    if k < 2 {
        return Err(Error::Config(format!(
            "R-hat needs at least two chains, got {k}"
        )));
    }
    let len = chains[0].len();
    if len < 10 {
        return Err(Error::Config(format!(
            "R-hat needs chains of at least 10 draws, got {len}"
        )));
    }
    let d = chains[0][0].len();
    for c in chains {
        if c.len() != len || c.iter().any(|row| row.len() != d) {
            return Err(Error::Config(
                "R-hat chains must share length and dimension".into(),
            ));
        }
    }
    let start = len / 2;
    let n = len - start;
    let means: Vec<DVector<f64>> = chains
        .iter()
        .map(|c| {
            let mut m = DVector::zeros(d);
            for row in &c[start..] {
                m += DVector::from_column_slice(row);
            }
            m / n as f64
        })
        .collect();
    let grand = means.iter().fold(DVector::zeros(d), |a, m| a + m) / k as f64;

    let mut w = DMatrix::zeros(d, d);
    for (c, m) in chains.iter().zip(&means) {
        for row in &c[start..] {
            let dev = DVector::from_column_slice(row) - m;
            w += &dev * dev.transpose();
        }
    }
    w /= (k * (n - 1)) as f64;
    let mut b_over_n = DMatrix::zeros(d, d);
    for m in &means {
        let dev = m - &grand;
        b_over_n += &dev * dev.transpose();
    }
    b_over_n /= (k - 1) as f64;

    let (lw, regularized) = match CholeskyFactor::factor(&w) {
        Ok(l) => (l, false),
        Err(_) => {
            let scale = (w.trace() / d as f64).abs().max(1.0);
            let ridge = &w + DMatrix::identity(d, d) * (1e-10 * scale);
            (CholeskyFactor::factor(&ridge)?, true)
        }
    };
    // Eigenvalues of W⁻¹B/n equal those of L⁻¹ (B/n) L⁻ᵀ.
    let half = lw.solve_lower(&b_over_n)?;
    let sym = symmetrize(&lw.solve_lower(&half.transpose())?);
    let lambda = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let value = (n as f64 - 1.0) / n as f64 + (k as f64 + 1.0) / k as f64 * lambda.max(0.0);
    Ok(Rhat { value, regularized })
}
