/// Classical fixed-step fourth-order Runge-Kutta over `steps` steps of `h`.
pub(crate) fn rk4<const N: usize, F>(mut y: [f64; N], h: f64, steps: usize, rhs: F) -> [f64; N]
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    for _ in 0..steps {
        y = rk4_step(&y, h, &rhs);
    }
    y
}

pub(crate) fn rk4_step<const N: usize, F>(y: &[f64; N], h: f64, rhs: &F) -> [f64; N]
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    let k1 = rhs(y);
    let k2 = rhs(&axpy(y, 0.5 * h, &k1));
    let k3 = rhs(&axpy(y, 0.5 * h, &k2));
    let k4 = rhs(&axpy(y, h, &k3));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn axpy<const N: usize>(y: &[f64; N], a: f64, k: &[f64; N]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        out[i] += a * k[i];
    }
    out
}
