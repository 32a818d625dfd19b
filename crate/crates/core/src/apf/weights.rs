use nalgebra::DVector;

/// `ln Σ exp(v)`, `−∞` for an empty or all `−∞` input.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalized weights from log weights; `None` if every weight is zero.
pub fn normalize_log_weights(log_w: &[f64]) -> Option<Vec<f64>> {
    let total = log_sum_exp(log_w);
    if !total.is_finite() {
        return None;
    }
    Some(log_w.iter().map(|v| (v - total).exp()).collect())
}

/// `ln[N(u; 0, I) / N(u; μ, L Lᵀ)]` for `u = μ + L ξ`:
/// `ln|L| + ½(ξᵀξ − uᵀu)`.
pub fn log_upsilon(log_det_l: f64, xi: &DVector<f64>, u: &DVector<f64>) -> f64 {
    log_det_l + 0.5 * (xi.norm_squared() - u.norm_squared())
}

/// `ln[(1/M Σ w) (Σ ω)]` from log weights.
pub fn likelihood_increment(log_w: &[f64], log_omega: &[f64]) -> f64 {
    let m = log_w.len() as f64;
    log_sum_exp(log_w) - m.ln() + log_sum_exp(log_omega)
}

/// `1 / Σ w̃²` for normalized weights.
pub fn effective_sample_size(w: &[f64]) -> f64 {
    1.0 / w.iter().map(|v| v * v).sum::<f64>()
}
