//! Nutrient-phytoplankton-zooplankton-detritus box model.
//!
//! Thirteen states: the nitrogen pools `P, Z, D, N` and nine autoregressive
//! community processes, each driven by one daily noise term. Observations are
//! `N` and chlorophyll-a, both log-normal.

use serde::{Deserialize, Serialize};

use super::ode::rk4_step;
use crate::error::{check_len, Error, Result};
use crate::kvfile::KvFile;
use crate::model::{Dims, Factorization, Integrator, ObsLink, StateSpaceModel};
use crate::prior::{normal_log_density, Prior, Univariate};

const DEFAULTS: &str = include_str!("npzd_defaults.txt");
const PRIORS: &str = include_str!("npzd_priors.txt");

/// Autoregressive processes in noise order. The first four are driven by the
/// phytoplankton diversity factor, the rest by the zooplankton one.
pub const AR_NAMES: [&str; 9] = [
    "g_max",
    "lambda_max",
    "R_N",
    "a_N",
    "I_Z",
    "Cl_Z",
    "E_Z",
    "r_D",
    "m_Q",
];
const N_PHYTO: usize = 4;

pub const PARAM_NAMES: [&str; 15] = [
    "K_W",
    "a_Ch",
    "S_D",
    "f_D",
    "mu_g_max",
    "mu_lambda_max",
    "mu_R_N",
    "mu_a_N",
    "mu_I_Z",
    "mu_Cl_Z",
    "mu_E_Z",
    "mu_r_D",
    "mu_m_Q",
    "PDF",
    "ZDF",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpzdState {
    pub p: f64,
    pub z: f64,
    pub d: f64,
    pub n: f64,
    /// Ordered as [`AR_NAMES`].
    pub ar: [f64; 9],
}

impl NpzdState {
    pub fn from_slice(x: &[f64]) -> Result<Self> {
        check_len("NPZD state", 13, x.len())?;
        let mut ar = [0.0; 9];
        ar.copy_from_slice(&x[4..]);
        Ok(Self {
            p: x[0],
            z: x[1],
            d: x[2],
            n: x[3],
            ar,
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.p, self.z, self.d, self.n];
        v.extend_from_slice(&self.ar);
        v
    }

    pub fn total_nitrogen(&self) -> f64 {
        self.p + self.z + self.d + self.n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpzdParams {
    pub k_w: f64,
    pub a_ch: f64,
    pub s_d: f64,
    pub f_d: f64,
    /// Stationary means of the processes, ordered as [`AR_NAMES`].
    pub mu: [f64; 9],
    pub pdf: f64,
    pub zdf: f64,
}

impl NpzdParams {
    pub fn from_slice(theta: &[f64]) -> Result<Self> {
        check_len("NPZD parameters", 15, theta.len())?;
        let mut mu = [0.0; 9];
        mu.copy_from_slice(&theta[4..13]);
        Ok(Self {
            k_w: theta[0],
            a_ch: theta[1],
            s_d: theta[2],
            f_d: theta[3],
            mu,
            pdf: theta[13],
            zdf: theta[14],
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.k_w, self.a_ch, self.s_d, self.f_d];
        v.extend_from_slice(&self.mu);
        v.push(self.pdf);
        v.push(self.zdf);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpzdConstants {
    pub tau_p: f64,
    pub tau_z: f64,
    /// Noise scale factors, ordered as [`AR_NAMES`].
    pub sigma: [f64; 9],
    pub q10: f64,
    pub t_ref: f64,
    pub upsilon: f64,
    pub q_yield: f64,
    pub chi_min: f64,
    pub chi_max: f64,
    pub e0: f64,
    pub kappa: f64,
    pub mld: f64,
    pub bcn: f64,
    pub bcp: f64,
    pub bcd: f64,
    pub temperature: f64,
    pub obs_sd: f64,
    pub substeps: usize,
}

impl NpzdConstants {
    pub fn from_kv(kv: &KvFile) -> Result<Self> {
        let mut sigma = [0.0; 9];
        for (s, name) in sigma.iter_mut().zip(AR_NAMES) {
            *s = kv.f64(&format!("sigma_{}", name.to_lowercase()))?;
        }
        let substeps = kv.f64("substeps")?;
        if substeps < 1.0 || substeps.fract() != 0.0 {
            return Err(Error::Config(format!(
                "substeps must be a positive integer, got {substeps}"
            )));
        }
        Ok(Self {
            tau_p: kv.f64("tau_p")?,
            tau_z: kv.f64("tau_z")?,
            sigma,
            q10: kv.f64("q10")?,
            t_ref: kv.f64("t_ref")?,
            upsilon: kv.f64("upsilon")?,
            q_yield: kv.f64("q_yield")?,
            chi_min: kv.f64("chi_min")?,
            chi_max: kv.f64("chi_max")?,
            e0: kv.f64("e0")?,
            kappa: kv.f64("kappa")?,
            mld: kv.f64("mld")?,
            bcn: kv.f64("bcn")?,
            bcp: kv.f64("bcp")?,
            bcd: kv.f64("bcd")?,
            temperature: kv.f64("temperature")?,
            obs_sd: kv.f64("obs_sd")?,
            substeps: substeps as usize,
        })
    }
}

impl Default for NpzdConstants {
    fn default() -> Self {
        Self::from_kv(&default_kv()).expect("embedded NPZD defaults are valid")
    }
}

/// The embedded defaults file.
pub fn default_kv() -> KvFile {
    KvFile::parse(DEFAULTS).expect("embedded NPZD defaults parse")
}

/// The embedded priors file.
pub fn default_prior_kv() -> KvFile {
    KvFile::parse(PRIORS).expect("embedded NPZD priors parse")
}

pub fn params_from_kv(kv: &KvFile) -> Result<NpzdParams> {
    let v = PARAM_NAMES
        .iter()
        .map(|n| kv.f64(&format!("param.{n}")))
        .collect::<Result<Vec<_>>>()?;
    NpzdParams::from_slice(&v)
}

/// Initial state from the defaults: pools from `x0.*`, processes at their means.
pub fn x0_from_kv(kv: &KvFile) -> Result<NpzdState> {
    let theta = params_from_kv(kv)?;
    Ok(NpzdState {
        p: kv.f64("x0.P")?,
        z: kv.f64("x0.Z")?,
        d: kv.f64("x0.D")?,
        n: kv.f64("x0.N")?,
        ar: theta.mu,
    })
}

/// One daily step of an autoregressive process:
/// `B (1 − dt/τ) + (μ + DF σ ξ) dt/τ`.
pub fn npzd_ar_step(b: f64, mu: f64, sigma: f64, df: f64, xi: f64, dt: f64, tau: f64) -> f64 {
    let f = dt / tau;
    b * (1.0 - f) + (mu + df * sigma * xi) * f
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpzdRates {
    pub tc: f64,
    pub a: f64,
    pub gr: f64,
    pub m: f64,
    pub r: f64,
    pub g: f64,
    pub h_e: f64,
    pub h_n: f64,
    pub e: f64,
    pub kz: f64,
    pub chi: f64,
    pub chla: f64,
}

/// Rate quantities at state `x`.
///
/// Process values are clamped at zero before use. Light attenuation depends on
/// chlorophyll, which in turn depends on light limitation, so `Chla` is taken
/// as the root of `c = Chla(h_E(Kz(c)))`, solved to near machine precision.
pub fn npzd_rates(x: &NpzdState, theta: &NpzdParams, k: &NpzdConstants) -> NpzdRates {
    let [g_max, lambda_max, r_n, a_n, i_z, cl_z, _e_z, r_d, m_q] = x.ar.map(|v| v.max(0.0));
    let p = x.p.max(0.0);
    let z = x.z.max(0.0);
    let n = x.n.max(0.0);

    let tc = k.q10.powf((k.temperature - k.t_ref) / 10.0);
    let (a, gr) = if i_z > 0.0 {
        let a = cl_z * p / i_z;
        let av = a.powf(k.upsilon);
        (a, tc * i_z * av / (1.0 + av))
    } else {
        (0.0, 0.0)
    };
    let m = tc * m_q * z;
    let r = tc * r_d;

    let h_n = if a_n > 0.0 && n > 0.0 {
        n / (g_max * tc / a_n + n)
    } else {
        0.0
    };
    let slope = theta.a_ch * k.q_yield;
    let light = |chla: f64| -> (f64, f64, f64) {
        let kz = (theta.k_w + theta.a_ch * chla) * k.mld;
        let e = if kz > 0.0 {
            k.e0 * (1.0 - (-kz).exp()) / kz
        } else {
            k.e0
        };
        let h_e = if g_max > 0.0 {
            1.0 - (-slope * lambda_max * e / g_max).exp()
        } else {
            1.0
        };
        (kz, e, h_e)
    };
    let chla_of = |h_e: f64| -> f64 {
        let denom = r_n * h_e + h_n;
        if denom > 0.0 {
            p * (lambda_max / k.chi_max) * h_n * tc / denom
        } else {
            0.0
        }
    };
    let chla = solve_chla(|c| chla_of(light(c).2));
    let (kz, e, h_e) = light(chla);

    let g = if h_e + h_n > 0.0 {
        tc * g_max * h_e * h_n / (h_e + h_n)
    } else {
        0.0
    };
    let chi = if h_e + h_n > 0.0 {
        (k.chi_min * h_e + k.chi_max * h_n) / (h_e + h_n)
    } else {
        k.chi_max
    };
    NpzdRates {
        tc,
        a,
        gr,
        m,
        r,
        g,
        h_e,
        h_n,
        e,
        kz,
        chi,
        chla,
    }
}

/// Root of `c = f(c)` for nondecreasing, bounded `f`, by Illinois regula falsi
/// on the bracket `[f(0), f(f(0)) ... ]`.
fn solve_chla<F: Fn(f64) -> f64>(f: F) -> f64 {
    let lo0 = f(0.0);
    if !(lo0 > 0.0) {
        return lo0.max(0.0);
    }
    // f is nondecreasing so the root lies above f(0); grow until f(c) <= c.
    let mut lo = lo0;
    let mut g_lo = f(lo) - lo;
    if g_lo <= 0.0 {
        return lo;
    }
    let mut hi = 2.0 * lo;
    let mut g_hi = f(hi) - hi;
    let mut guard = 0;
    while g_hi > 0.0 && guard < 200 {
        lo = hi;
        g_lo = g_hi;
        hi *= 2.0;
        g_hi = f(hi) - hi;
        guard += 1;
    }
    let tol = 1e-14 * hi.abs().max(1e-300);
    let mut side = 0i8;
    for _ in 0..200 {
        let c = (lo * g_hi - hi * g_lo) / (g_hi - g_lo);
        let g_c = f(c) - c;
        if g_c.abs() <= tol || (hi - lo).abs() <= tol {
            return c;
        }
        if g_c > 0.0 {
            lo = c;
            g_lo = g_c;
            if side == 1 {
                g_hi *= 0.5;
            }
            side = 1;
        } else {
            hi = c;
            g_hi = g_c;
            if side == -1 {
                g_lo *= 0.5;
            }
            side = -1;
        }
    }
    0.5 * (lo + hi)
}

/// `d(P, Z, D, N)/dt` with the processes frozen at `x.ar`.
pub fn npzd_derivatives(
    pools: &[f64; 4],
    x: &NpzdState,
    theta: &NpzdParams,
    k: &NpzdConstants,
) -> [f64; 4] {
    let [p, z, d, n] = *pools;
    let state = NpzdState {
        p,
        z,
        d,
        n,
        ar: x.ar,
    };
    let rt = npzd_rates(&state, theta, k);
    let e_z = x.ar[6].clamp(0.0, 1.0);
    let f_d = theta.f_d.clamp(0.0, 1.0);
    let mix = k.kappa / k.mld;
    let grazing = rt.gr * z;
    [
        rt.g * p - grazing + mix * (k.bcp - p),
        e_z * grazing - rt.m * z,
        (1.0 - e_z) * f_d * grazing + rt.m * z - rt.r * d - theta.s_d * d / k.mld
            + mix * (k.bcd - d),
        -rt.g * p + (1.0 - e_z) * (1.0 - f_d) * grazing + rt.r * d + mix * (k.bcn - n),
    ]
}

/// Advances one day: the nine processes take one autoregressive step driven
/// by `u`, then the pools are integrated with RK4 substeps.
///
/// Negative `P`, `Z` or `D` after a substep are clipped to zero and the
/// deficit charged to `N`, so total nitrogen is unchanged by clipping.
pub fn npzd_transition(
    u: &[f64],
    x: &NpzdState,
    theta: &NpzdParams,
    k: &NpzdConstants,
) -> Result<NpzdState> {
    check_len("NPZD noise", 9, u.len())?;
    let mut ar = x.ar;
    for i in 0..9 {
        let (df, tau) = if i < N_PHYTO {
            (theta.pdf, k.tau_p)
        } else {
            (theta.zdf, k.tau_z)
        };
        ar[i] = npzd_ar_step(x.ar[i], theta.mu[i], k.sigma[i], df, u[i], 1.0, tau);
    }
    let frozen = NpzdState { ar, ..*x };
    let h = 1.0 / k.substeps as f64;
    let rhs = |s: &[f64; 4]| npzd_derivatives(s, &frozen, theta, k);
    let mut pools = [x.p, x.z, x.d, x.n];
    for _ in 0..k.substeps {
        pools = rk4_step(&pools, h, &rhs);
        for i in 0..3 {
            if pools[i] < 0.0 {
                pools[3] += pools[i];
                pools[i] = 0.0;
            }
        }
        if pools[3] < 0.0 {
            pools[3] = 0.0;
        }
    }
    let out = NpzdState {
        p: pools[0],
        z: pools[1],
        d: pools[2],
        n: pools[3],
        ar,
    };
    if out.to_vec().iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::IntegrationFailure)
    }
}

/// `ln p(N_obs, Chla_obs | x)`. A non-finite entry is treated as missing.
pub fn npzd_obs_logdensity(
    y: &[f64],
    x: &NpzdState,
    theta: &NpzdParams,
    k: &NpzdConstants,
) -> Result<f64> {
    check_len("NPZD observation", 2, y.len())?;
    for &v in y {
        if v.is_finite() && v <= 0.0 {
            return Err(Error::InvalidObservation(format!(
                "NPZD observations must be positive, got {v}"
            )));
        }
    }
    let predicted = [x.n, npzd_rates(x, theta, k).chla];
    let mut total = 0.0;
    for (obs, pred) in y.iter().zip(predicted) {
        if !obs.is_finite() {
            continue;
        }
        if !(pred > 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
        total += normal_log_density(obs.ln(), pred.ln(), k.obs_sd) - obs.ln();
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct NpzdModel {
    pub constants: NpzdConstants,
    theta_prior: Prior,
    x0_prior: Prior,
}

impl Default for NpzdModel {
    fn default() -> Self {
        Self::from_kv(&default_kv(), &default_prior_kv()).expect("embedded NPZD files are valid")
    }
}

impl NpzdModel {
    pub fn from_kv(defaults: &KvFile, priors: &KvFile) -> Result<Self> {
        let constants = NpzdConstants::from_kv(defaults)?;
        let parse = |key: String| -> Result<Univariate> {
            let text = priors
                .get(&key)
                .ok_or_else(|| Error::Config(format!("missing prior `{key}`")))?;
            Univariate::parse(text)
        };
        let theta_prior = Prior::new(
            PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
            PARAM_NAMES
                .iter()
                .map(|n| parse(n.to_string()))
                .collect::<Result<_>>()?,
        );
        let x_names = state_names();
        let x0_prior = Prior::new(
            x_names.clone(),
            x_names
                .iter()
                .map(|n| parse(format!("x0.{n}")))
                .collect::<Result<_>>()?,
        );
        Ok(Self {
            constants,
            theta_prior,
            x0_prior,
        })
    }
}

pub fn state_names() -> Vec<String> {
    ["P", "Z", "D", "N"]
        .iter()
        .chain(AR_NAMES.iter())
        .map(|s| s.to_string())
        .collect()
}

impl StateSpaceModel for NpzdModel {
    fn name(&self) -> &str {
        "npzd"
    }

    fn dims(&self) -> Dims {
        Dims {
            n_x: 13,
            n_u: 9,
            n_theta: 15,
            n_y: 2,
        }
    }

    fn transition(&self, u: &[f64], x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let next = npzd_transition(
            u,
            &NpzdState::from_slice(x)?,
            &NpzdParams::from_slice(theta)?,
            &self.constants,
        )?;
        Ok(next.to_vec())
    }

    fn observation_mean(&self, x: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let state = NpzdState::from_slice(x)?;
        let rates = npzd_rates(&state, &NpzdParams::from_slice(theta)?, &self.constants);
        Ok(vec![state.n.ln(), rates.chla.ln()])
    }

    fn observation_sd(&self, _theta: &[f64]) -> Vec<f64> {
        vec![self.constants.obs_sd; 2]
    }

    fn observation_link(&self) -> ObsLink {
        ObsLink::Log
    }

    fn theta_prior(&self) -> &Prior {
        &self.theta_prior
    }

    fn x0_prior(&self) -> &Prior {
        &self.x0_prior
    }

    fn default_factorization(&self) -> Factorization {
        Factorization::X0InChain
    }

    fn integrator(&self) -> Option<Integrator> {
        Some(Integrator {
            method: "rk4-clipped",
            substep_days: 1.0 / self.constants.substeps as f64,
        })
    }

    fn noise_names(&self) -> Vec<String> {
        AR_NAMES.iter().map(|n| format!("xi_{n}")).collect()
    }

    fn observation_names(&self) -> Vec<String> {
        vec!["N_obs".into(), "Chla_obs".into()]
    }
}
