use serde::{Deserialize, Serialize};

use super::weights::normalize_log_weights;
use crate::error::{Error, Result};
use crate::rng::{draw_uniform, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMethod {
    #[default]
    Multinomial,
    Stratified,
    Systematic,
}

/// Draws `n` ancestor indices with `P(a = j) ∝ exp(log_omega[j])`.
///
/// Multinomial draws use sorted uniforms and one pass over the cumulative
/// weights. Fails with [`Error::FilterCollapse`] (time 0) when every weight is
/// zero.
pub fn resample(
    log_omega: &[f64],
    n: usize,
    method: ResampleMethod,
    stream: &RngStream,
) -> Result<Vec<usize>> {
    let w = normalize_log_weights(log_omega).ok_or(Error::FilterCollapse { time: 0 })?;
    let mut points = match method {
        ResampleMethod::Multinomial => {
            let mut u = draw_uniform(stream, n);
            u.sort_by(f64::total_cmp);
            u
        }
        ResampleMethod::Stratified => draw_uniform(stream, n)
            .into_iter()
            .enumerate()
            .map(|(i, v)| (i as f64 + v) / n as f64)
            .collect(),
        ResampleMethod::Systematic => {
            let v = draw_uniform(stream, 1)[0];
            (0..n).map(|i| (i as f64 + v) / n as f64).collect()
        }
    };
    // Guard against a cumulative sum that falls short of 1 by rounding.
    let last = w
        .iter()
        .rposition(|v| *v > 0.0)
        .expect("normalized weights have a positive entry");
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    let mut cum = w[0];
    for u in points.drain(..) {
        while u >= cum && j < last {
            j += 1;
            cum += w[j];
        }
        out.push(j);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_nonzero_weight() {
        let lw = [f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY];
        for method in [
            ResampleMethod::Multinomial,
            ResampleMethod::Stratified,
            ResampleMethod::Systematic,
        ] {
            let a = resample(&lw, 50, method, &RngStream::root(1)).unwrap();
            assert!(a.iter().all(|&i| i == 2));
        }
    }

    #[test]
    fn uniform_frequencies() {
        let m = 100_000;
        let k = 10;
        let a = resample(
            &vec![0.0; k],
            m,
            ResampleMethod::Multinomial,
            &RngStream::root(3),
        )
        .unwrap();
        let mut counts = vec![0usize; k];
        for i in a {
            counts[i] += 1;
        }
        let p = 1.0 / k as f64;
        let se = (m as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - m as f64 * p).abs() < 5.0 * se);
        }
    }

    #[test]
    fn weighted_frequencies() {
        let m = 200_000;
        let w = [0.1f64, 0.6, 0.3];
        let lw: Vec<f64> = w.iter().map(|v| v.ln()).collect();
        let a = resample(&lw, m, ResampleMethod::Multinomial, &RngStream::root(4)).unwrap();
        for (j, p) in w.iter().enumerate() {
            let c = a.iter().filter(|&&i| i == j).count() as f64;
            let se = (m as f64 * p * (1.0 - p)).sqrt();
            assert!((c - m as f64 * p).abs() < 5.0 * se);
        }
    }

    #[test]
    fn deterministic() {
        let lw = [0.0, -1.0, -0.5, -3.0];
        let s = RngStream::new(9, &[1, 2]);
        assert_eq!(
            resample(&lw, 100, ResampleMethod::Multinomial, &s).unwrap(),
            resample(&lw, 100, ResampleMethod::Multinomial, &s).unwrap()
        );
    }

    #[test]
    fn collapse() {
        assert!(matches!(
            resample(
                &[f64::NEG_INFINITY; 3],
                3,
                ResampleMethod::Multinomial,
                &RngStream::root(0)
            ),
            Err(Error::FilterCollapse { .. })
        ));
    }
}
