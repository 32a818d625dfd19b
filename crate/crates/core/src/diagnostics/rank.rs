use std::io::Write;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{check_len, Error, Result};
use crate::models::simulate::format_f64;

/// Ranks `1..=n` with ties given their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Empirical CDF values: average ranks divided by `n`.
pub fn empirical_cdf(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    average_ranks(x).into_iter().map(|r| r / n).collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    /// Two-sided p-value from the t approximation with `n − 2` degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<Spearman> {
    check_len("paired sample", x.len(), y.len())?;
    let n = x.len();
    if n < 3 {
        return Err(Error::Config(format!(
            "rank correlation needs at least 3 pairs, got {n}"
        )));
    }
    let rho = pearson(&average_ranks(x), &average_ranks(y));
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        2.0 * dist.sf(t.abs())
    };
    Ok(Spearman { rho, p_value, n })
}

/// Empirical-CDF transforms of each parameter column and of the CAR values,
/// as rows `(cdf_1, ..., cdf_d, cdf_alpha)`.
pub fn rank_export(params: &[Vec<f64>], cars: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_len("CAR values", params.len(), cars.len())?;
    let d = params.first().map_or(0, Vec::len);
    if params.iter().any(|p| p.len() != d) {
        return Err(Error::Config(
            "parameter draws must share a dimension".into(),
        ));
    }
    let columns: Vec<Vec<f64>> = (0..d)
        .map(|j| empirical_cdf(&params.iter().map(|p| p[j]).collect::<Vec<_>>()))
        .collect();
    let alpha = empirical_cdf(cars);
    Ok((0..params.len())
        .map(|i| {
            let mut row: Vec<f64> = columns.iter().map(|c| c[i]).collect();
            row.push(alpha[i]);
            row
        })
        .collect())
}

/// Writes [`rank_export`] rows under `<name>_cdf..., alpha_cdf`.
pub fn write_rank_export<W: Write>(out: W, names: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = names.iter().map(|n| format!("{n}_cdf")).collect();
    header.push("alpha_cdf".into());
    w.write_record(&header)?;
    for row in rows {
        check_len("rank row", header.len(), row.len())?;
        w.write_record(row.iter().map(|v| format_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}
