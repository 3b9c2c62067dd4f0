//! Semi-closed-form Heston European put via the characteristic function.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;

/// Formulation of the characteristic function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// Branch-cut safe form with `g = (beta - d)/(beta + d)`.
    LittleTrap,
    /// Original form with `g = (beta + d)/(beta - d)`; loses the principal
    /// branch at long maturities.
    Original,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationConfig {
    /// Fixed truncation bound; `None` selects it from the integrand decay.
    pub bound: Option<f64>,
    /// Gauss-Legendre nodes per panel.
    pub order: usize,
    /// Initial number of panels; `order * panels >= 32`.
    pub panels: usize,
    /// Absolute tolerance between successive panel doublings.
    pub tol: f64,
    pub branch: Branch,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self { bound: None, order: 16, panels: 4, tol: 1e-10, branch: Branch::LittleTrap }
    }
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.bound {
            if !(b > 0.0) {
                return Err(Error::InvalidParameter(format!("integration bound {b} must be positive")));
            }
        }
        if self.order < 2 || self.order * self.panels < 32 {
            return Err(Error::InvalidParameter("quadrature needs at least 32 nodes".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("quadrature tolerance must be positive".into()));
        }
        Ok(())
    }
}

const MAX_PANELS: usize = 1 << 14;
const MAX_BOUND: f64 = 1e6;

/// `log(1 + z)` without cancellation for small `z`.
fn log1p(z: Complex64) -> Complex64 {
    let w = Complex64::new(1.0, 0.0) + z;
    let wm1 = w - 1.0;
    if wm1 == Complex64::new(0.0, 0.0) {
        z
    } else {
        w.ln() * (z / wm1)
    }
}

/// Characteristic function of `log(S_T / S_0)` (spot normalized to 1).
pub fn log_return_cf(u: Complex64, t: f64, mu: &ModelParams, nu0: f64, branch: Branch) -> Complex64 {
    let i = Complex64::i();
    let xi2 = mu.xi * mu.xi;
    let beta = mu.kappa - mu.rho * mu.xi * i * u;
    let q = i * u + u * u;
    let d = (beta * beta + q * xi2).sqrt();
    let e = (-d * t).exp();
    let drift = i * u * mu.r * t;
    match branch {
        Branch::LittleTrap => {
            // m = (beta - d) / xi^2 without cancellation
            let m = -q / (beta + d);
            let g_over = m / (beta + d);
            let g = g_over * xi2;
            let log_term = if xi2 > 0.0 {
                (log1p(-g * e) - log1p(-g)) / xi2
            } else {
                g_over * (1.0 - e)
            };
            let c = mu.kappa * mu.gamma * (m * t - 2.0 * log_term);
            let dd = nu0 * m * (1.0 - e) / (1.0 - g * e);
            (drift + c + dd).exp()
        }
        Branch::Original => {
            let g = (beta + d) / (beta - d);
            let ep = (d * t).exp();
            let c = mu.kappa * mu.gamma / xi2 * ((beta + d) * t - 2.0 * ((1.0 - g * ep) / (1.0 - g)).ln());
            let dd = nu0 / xi2 * (beta + d) * (1.0 - ep) / (1.0 - g * ep);
            (drift + c + dd).exp()
        }
    }
}

/// Characteristic function of `log S_T`.
pub fn heston_cf(u: Complex64, t: f64, mu: &ModelParams, nu0: f64, s0: f64) -> Result<Complex64> {
    let v = (Complex64::i() * u * s0.ln()).exp() * log_return_cf(u, t, mu, nu0, Branch::LittleTrap);
    if v.re.is_finite() && v.im.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("characteristic function at u = {u}, T = {t}: {v}")))
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for k in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[k] = -z;
        x[n - 1 - k] = z;
        w[k] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - k] = w[k];
    }
    (x, w)
}

fn composite(f: &impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, nodes: &(Vec<f64>, Vec<f64>)) -> f64 {
    let h = (b - a) / panels as f64;
    let mut sum = 0.0;
    for p in 0..panels {
        let c = a + (p as f64 + 0.5) * h;
        for (x, w) in nodes.0.iter().zip(&nodes.1) {
            sum += w * f(c + 0.5 * h * x);
        }
    }
    0.5 * h * sum
}

/// European put with spot `s0`, strike `strike`, maturity `t`.
pub fn heston_put_cf(s0: f64, strike: f64, t: f64, mu: &ModelParams, nu0: f64, config: &IntegrationConfig) -> Result<f64> {
    config.validate()?;
    if !(s0 > 0.0 && strike > 0.0 && t >= 0.0 && nu0 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "closed form needs positive spot, strike, variance and t >= 0, got {s0}, {strike}, {nu0}, {t}"
        )));
    }
    if t == 0.0 {
        return Ok((strike - s0).max(0.0));
    }
    let k = strike / s0;
    let lk = k.ln();
    let disc = (-mu.r * t).exp();
    let i = Complex64::i();
    let branch = config.branch;
    let cf = |u: Complex64| log_return_cf(u, t, mu, nu0, branch);
    // call = (1 - k disc)/2 + disc/pi int Re[e^{-iu ln k} (phi(u - i) - k phi(u)) / (iu)]
    let integrand = |u: f64| -> f64 {
        let uc = Complex64::new(u, 0.0);
        let x = (-i * uc * lk).exp() * (cf(uc - i) - k * cf(uc)) / (i * uc);
        x.re
    };
    let bound = match config.bound {
        Some(b) => b,
        None => {
            let mut b = 25.0;
            while b < MAX_BOUND {
                let uc = Complex64::new(b, 0.0);
                let env = (cf(uc - i).norm() + k * cf(uc).norm()) / b;
                if env < 1e-13 {
                    break;
                }
                b *= 2.0;
            }
            b.min(MAX_BOUND)
        }
    };
    let nodes = gauss_legendre(config.order);
    let mut panels = config.panels.max(1);
    let mut prev = composite(&integrand, 0.0, bound, panels, &nodes);
    loop {
        panels *= 2;
        if panels > MAX_PANELS {
            return Err(Error::Quadrature(format!(
                "no convergence to {} with {MAX_PANELS} panels on [0, {bound}]",
                config.tol
            )));
        }
        let cur = composite(&integrand, 0.0, bound, panels, &nodes);
        if !cur.is_finite() {
            return Err(Error::NonFinite(format!("Fourier integral for K = {strike}, T = {t}")));
        }
        let done = (cur - prev).abs() < config.tol;
        prev = cur;
        if done {
            break;
        }
    }
    let call = 0.5 * (1.0 - k * disc) + disc / std::f64::consts::PI * prev;
    let put = call - 1.0 + k * disc;
    Ok(s0 * put)
}

/// European call by the same integral, for parity checks.
pub fn heston_call_cf(s0: f64, strike: f64, t: f64, mu: &ModelParams, nu0: f64, config: &IntegrationConfig) -> Result<f64> {
    let put = heston_put_cf(s0, strike, t, mu, nu0, config)?;
    Ok(put + s0 - strike * (-mu.r * t).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn bs_put(s: f64, k: f64, t: f64, r: f64, sigma: f64) -> f64 {
        let n = Normal::new(0.0, 1.0).unwrap();
        let d1 = ((s / k).ln() + (r + 0.5 * sigma * sigma) * t) / (sigma * t.sqrt());
        let d2 = d1 - sigma * t.sqrt();
        k * (-r * t).exp() * n.cdf(-d2) - s * n.cdf(-d1)
    }

    fn p2() -> ModelParams {
        ModelParams::new(0.25, -0.5, 0.1, 0.4, 0.05).unwrap()
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = w.iter().sum();
        assert_abs_diff_eq!(s, 2.0, epsilon = 1e-14);
        let m14: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert_abs_diff_eq!(m14, 2.0 / 15.0, epsilon = 1e-14);
    }

    #[test]
    fn cf_normalization_and_bound() {
        let mu = p2();
        let c0 = heston_cf(Complex64::new(0.0, 0.0), 1.5, &mu, 0.1, 1.0).unwrap();
        assert_abs_diff_eq!(c0.re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c0.im, 0.0, epsilon = 1e-15);
        for u in [0.1, 1.0, 7.3, 40.0, 300.0] {
            assert!(heston_cf(Complex64::new(u, 0.0), 1.5, &mu, 0.1, 1.0).unwrap().norm() <= 1.0 + 1e-14);
        }
    }

    #[test]
    fn cf_small_xi_matches_black_scholes() {
        let mu = ModelParams::new(1e-6, -0.3, 0.04, 1.5, 0.02).unwrap();
        let t = 1.3;
        for u in [0.3, 1.0, 4.0, 12.0] {
            let uc = Complex64::new(u, 0.0);
            let h = heston_cf(uc, t, &mu, mu.gamma, 1.0).unwrap();
            let i = Complex64::i();
            let bs = (i * uc * (mu.r - 0.5 * mu.gamma) * t - 0.5 * mu.gamma * t * u * u).exp();
            assert!((h - bs).norm() < 1e-6, "u = {u}: {h} vs {bs}");
        }
    }

    #[test]
    fn put_small_xi_matches_black_scholes() {
        let mu = ModelParams::new(1e-6, 0.0, 0.04, 1.0, 0.0).unwrap();
        let p = heston_put_cf(1.0, 1.0, 1.0, &mu, 0.04, &IntegrationConfig::default()).unwrap();
        assert_abs_diff_eq!(p, 0.0797, epsilon = 1e-4);
        assert_abs_diff_eq!(p, bs_put(1.0, 1.0, 1.0, 0.0, 0.2), epsilon = 1e-8);
    }

    #[test]
    fn put_call_parity_and_bounds() {
        let mu = p2();
        let cfg = IntegrationConfig::default();
        for &(k, t) in &[(0.8, 0.25), (1.0, 1.0), (1.2, 2.0)] {
            let p = heston_put_cf(1.0, k, t, &mu, 0.1, &cfg).unwrap();
            let c = heston_call_cf(1.0, k, t, &mu, 0.1, &cfg).unwrap();
            assert_abs_diff_eq!(c - p, 1.0 - k * (-mu.r * t).exp(), epsilon = 1e-8);
            let disc = k * (-mu.r * t).exp();
            assert!(p >= (disc - 1.0).max(0.0) - 1e-10 && p <= disc);
        }
    }

    #[test]
    fn branches_agree_at_short_maturity() {
        let mu = p2();
        let mut cfg = IntegrationConfig::default();
        let a = heston_put_cf(1.0, 1.05, 0.5, &mu, 0.1, &cfg).unwrap();
        cfg.branch = Branch::Original;
        let b = heston_put_cf(1.0, 1.05, 0.5, &mu, 0.1, &cfg).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
    }

    #[test]
    fn doubling_bound_is_invisible() {
        let mu = ModelParams::new(0.7, -0.8, 0.3, 1.4, 0.05).unwrap();
        let cfg = IntegrationConfig::default();
        let a = heston_put_cf(1.0, 0.9, 0.25, &mu, 0.3, &cfg).unwrap();
        let b = heston_put_cf(1.0, 0.9, 0.25, &mu, 0.3, &IntegrationConfig { bound: Some(2.0 * 400.0), ..cfg }).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-8);
    }

    #[test]
    fn monotone_and_convex_in_strike() {
        let mu = p2();
        let cfg = IntegrationConfig::default();
        let strikes: Vec<f64> = (0..21).map(|i| 0.7 + 0.03 * i as f64).collect();
        let p: Vec<f64> = strikes.iter().map(|&k| heston_put_cf(1.0, k, 0.75, &mu, 0.1, &cfg).unwrap()).collect();
        for w in p.windows(2) {
            assert!(w[1] >= w[0]);
        }
        for w in p.windows(3) {
            assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-6);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = IntegrationConfig { order: 4, panels: 2, ..Default::default() };
        assert!(heston_put_cf(1.0, 1.0, 1.0, &p2(), 0.1, &cfg).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn put_within_no_arbitrage_bounds(
            xi in 0.1f64..0.9, rho in -0.95f64..0.3, gamma in 0.01f64..0.5, kappa in 0.1f64..5.0,
            nu0 in 0.01f64..0.5, k in 0.7f64..1.3, t in 0.05f64..2.0,
        ) {
            let mu = ModelParams::new(xi, rho, gamma, kappa, 0.05).unwrap();
            let p = heston_put_cf(1.0, k, t, &mu, nu0, &IntegrationConfig::default()).unwrap();
            let disc = k * (-mu.r * t).exp();
            prop_assert!(p >= (disc - 1.0).max(0.0) - 1e-8 && p <= disc + 1e-12, "put {p}");
        }
    }
}
