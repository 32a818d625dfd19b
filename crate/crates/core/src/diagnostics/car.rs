use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Replicates this many nats below the largest are treated as zero.
pub const UNDERFLOW_NATS: f64 = 700.0;

/// A conditional acceptance rate with its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarEstimate {
    pub location: Vec<f64>,
    pub log_likelihoods: Vec<f64>,
    /// `None` when every replicate collapsed.
    pub alpha: Option<f64>,
    pub collapsed_count: usize,
}

impl CarEstimate {
    pub fn l(&self) -> usize {
        self.log_likelihoods.len()
    }
}

/// Likelihoods scaled by the largest one, with deep underflow set to zero.
fn relative_likelihoods(log_l: &[f64]) -> Result<Vec<f64>> {
    if log_l.is_empty() {
        return Err(Error::Config(
            "conditional acceptance rate needs at least one replicate".into(),
        ));
    }
    if log_l.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Config(
            "log-likelihood replicates must be finite or -inf".into(),
        ));
    }
    let max = log_l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::UndefinedCar);
    }
    Ok(log_l
        .iter()
        .map(|v| {
            let d = v - max;
            if d < -UNDERFLOW_NATS {
                0.0
            } else {
                d.exp()
            }
        })
        .collect())
}

/// CAR from the `L × L` transition matrix of identity proposals:
/// `T_ij = min(l_j / l_i, 1) / L` off the diagonal, `β_i = 1 − T_ii + 1/L`,
/// and `α = l̄ · β`.
pub fn car_direct(log_l: &[f64]) -> Result<f64> {
    let l = relative_likelihoods(log_l)?;
    let n = l.len();
    let inv = 1.0 / n as f64;
    let total: f64 = l.iter().sum();
    let mut alpha = 0.0;
    for i in 0..n {
        if l[i] == 0.0 {
            continue;
        }
        let off: f64 = (0..n)
            .filter(|&j| j != i)
            .map(|j| inv * (l[j] / l[i]).min(1.0))
            .sum();
        let t_ii = 1.0 - off;
        let beta = 1.0 - t_ii + inv;
        alpha += l[i] / total * beta;
    }
    Ok(alpha)
}

/// CAR by sorting: with ascending normalized likelihoods and inclusive
/// prefix sums `c`, `α = (2 Σ c_i − 1) / L`.
pub fn car_sorted(log_l: &[f64]) -> Result<f64> {
    let mut l = relative_likelihoods(log_l)?;
    let n = l.len();
    l.sort_by(f64::total_cmp);
    // Unnormalized prefix sums keep the all-equal case exact.
    let mut prefix = 0.0;
    let mut sum_prefix = 0.0;
    for v in &l {
        prefix += v;
        sum_prefix += prefix;
    }
    let alpha = (2.0 * sum_prefix - prefix) / (n as f64 * prefix);
    Ok(alpha.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_replicates() {
        for n in [1, 2, 7, 64] {
            let v = vec![-3.2; n];
            assert_eq!(car_sorted(&v).unwrap(), 1.0);
            assert!((car_direct(&v).unwrap() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn one_and_three() {
        let v = [0.0, 3f64.ln()];
        assert_eq!(car_sorted(&v).unwrap(), 0.75);
        assert!((car_direct(&v).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn dominant_replicate() {
        let mut v = vec![0.0; 10];
        v[3] = 1e6f64.ln();
        let d = car_direct(&v).unwrap();
        assert!((car_sorted(&v).unwrap() - d).abs() < 1e-12);
        assert!(d < 0.2);
    }

    #[test]
    fn raising_a_small_replicate_can_help() {
        // A new maximum placed over a low replicate evens out the set.
        let before = car_direct(&[0.0, -300.0]).unwrap();
        let after = car_direct(&[0.0, 1e-6]).unwrap();
        assert!(before < 0.51 && after > 0.99);
    }

    #[test]
    fn collapsed_replicates() {
        assert!(matches!(
            car_sorted(&[f64::NEG_INFINITY; 4]),
            Err(Error::UndefinedCar)
        ));
        assert!(matches!(
            car_direct(&[f64::NEG_INFINITY; 4]),
            Err(Error::UndefinedCar)
        ));
        let v = [0.0, f64::NEG_INFINITY];
        assert_eq!(car_sorted(&v).unwrap(), 0.5);
        assert!((car_direct(&v).unwrap() - 0.5).abs() < 1e-15);
    }

    fn replicates() -> impl Strategy<Value = Vec<f64>> {
        (2usize..=64, 0.0f64..300.0)
            .prop_flat_map(|(n, spread)| prop::collection::vec(-spread..=0.0f64, n))
    }

    proptest! {
        #[test]
        fn forms_agree(v in replicates()) {
            prop_assert!((car_sorted(&v).unwrap() - car_direct(&v).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn shift_invariant(v in replicates(), shift in -1e3f64..1e3) {
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            prop_assert!((car_sorted(&v).unwrap() - car_sorted(&shifted).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn permutation_invariant(v in replicates()) {
            let mut r = v.clone();
            r.reverse();
            prop_assert!((car_direct(&v).unwrap() - car_direct(&r).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn raising_the_maximum_never_helps(v in replicates(), bump in 1e-6f64..50.0) {
            let (i, max) = v.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            let mut w = v.clone();
            w[i] = max + bump;
            prop_assert!(car_direct(&w).unwrap() <= car_direct(&v).unwrap() + 1e-12);
        }

        #[test]
        fn in_unit_interval(v in replicates()) {
            let a = car_sorted(&v).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
