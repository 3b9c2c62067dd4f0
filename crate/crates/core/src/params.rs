//! Parameter vectors, admissible boxes and the put payoff shared by every
//! pricing backend.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Margin used when the Feller inequality is enforced numerically.
pub const FELLER_EPS: f64 = 1e-8;

/// Correlation bounds are pulled strictly inside (-1, 1).
pub const RHO_LIMIT: f64 = 0.9999;

/// Exercise style of a put option.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    European,
    American,
}

impl Style {
    pub fn as_str(self) -> &'static str {
        match self {
            Style::European => "european",
            Style::American => "american",
        }
    }
}

impl std::str::FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "european" | "eu" | "e" => Ok(Style::European),
            "american" | "am" | "a" => Ok(Style::American),
            other => Err(Error::Parse(format!("unknown option style '{other}'"))),
        }
    }
}

/// PDE parameter vector (xi, rho, gamma, kappa, r).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Volatility of variance.
    pub xi: f64,
    /// Correlation between the asset and variance drivers.
    pub rho: f64,
    /// Long-run variance.
    pub gamma: f64,
    /// Mean-reversion rate.
    pub kappa: f64,
    /// Risk-free rate per year.
    pub r: f64,
}

impl ModelParams {
    pub fn new(xi: f64, rho: f64, gamma: f64, kappa: f64, r: f64) -> Result<Self> {
        let p = Self { xi, rho, gamma, kappa, r };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.xi, self.rho, self.gamma, self.kappa, self.r]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter(format!("non-finite model parameters {self:?}")));
        }
        if self.xi <= 0.0 || self.gamma <= 0.0 || self.kappa <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "xi, gamma and kappa must be positive, got {self:?}"
            )));
        }
        if self.rho <= -1.0 || self.rho >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "rho must lie strictly inside (-1, 1), got {}",
                self.rho
            )));
        }
        if self.r < 0.0 {
            return Err(Error::InvalidParameter(format!("negative rate {}", self.r)));
        }
        Ok(())
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.xi, self.rho, self.gamma, self.kappa, self.r]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self { xi: a[0], rho: a[1], gamma: a[2], kappa: a[3], r: a[4] }
    }

    pub fn feller_margin(&self) -> f64 {
        feller_margin(self.xi, self.gamma, self.kappa)
    }
}

/// Calibration vector (xi, rho, gamma, kappa, nu0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibParams {
    pub xi: f64,
    pub rho: f64,
    pub gamma: f64,
    pub kappa: f64,
    /// Initial variance.
    pub nu0: f64,
}

impl CalibParams {
    pub const fn new(xi: f64, rho: f64, gamma: f64, kappa: f64, nu0: f64) -> Self {
        Self { xi, rho, gamma, kappa, nu0 }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.xi, self.rho, self.gamma, self.kappa, self.nu0]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self { xi: a[0], rho: a[1], gamma: a[2], kappa: a[3], nu0: a[4] }
    }

    /// PDE parameters for a fixed rate.
    pub fn model(&self, r: f64) -> ModelParams {
        ModelParams { xi: self.xi, rho: self.rho, gamma: self.gamma, kappa: self.kappa, r }
    }

    pub fn feller_margin(&self) -> f64 {
        feller_margin(self.xi, self.gamma, self.kappa)
    }

    pub fn satisfies_feller(&self, eps: f64) -> bool {
        self.feller_margin() >= eps
    }
}

/// Returns `2 kappa gamma - xi^2`; positive iff the Feller condition holds.
pub fn feller_margin(xi: f64, gamma: f64, kappa: f64) -> f64 {
    2.0 * kappa * gamma - xi * xi
}

/// Put payoff in log-moneyness, `max(K - K e^x, 0)`.
pub fn put_payoff_log(strike: f64, x: f64) -> f64 {
    (strike - strike * x.exp()).max(0.0)
}

/// Componentwise lower/upper bounds on a 5-vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lower: [f64; 5],
    pub upper: [f64; 5],
}

/// Box for the calibration vector.
pub type CalibBox = ParamBox;

impl ParamBox {
    /// Builds a box; index 1 is the correlation, whose bounds are kept
    /// within `±RHO_LIMIT`.
    pub fn new(lower: [f64; 5], upper: [f64; 5]) -> Result<Self> {
        let mut lower = lower;
        let mut upper = upper;
        lower[1] = lower[1].max(-RHO_LIMIT);
        upper[1] = upper[1].min(RHO_LIMIT);
        for i in 0..5 {
            if !(lower[i].is_finite() && upper[i].is_finite()) || lower[i] >= upper[i] {
                return Err(Error::InvalidParameter(format!(
                    "box coordinate {i}: lower {} must be below upper {}",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Parameter domain of the PDE model over (xi, rho, gamma, kappa, r).
    pub fn model_domain() -> Self {
        Self::new([0.1, -0.95, 0.01, 0.1, 0.0001], [0.9, 0.95, 0.5, 5.0, 0.8]).expect("valid box")
    }

    /// Admissible box for (xi, rho, gamma, kappa, nu0).
    pub fn calibration_default() -> Self {
        Self::new([0.1, -0.95, 0.01, 0.1, 1e-5], [0.9, 0.3, 0.5, 5.0, 1.0]).expect("valid box")
    }

    pub fn contains(&self, v: &[f64; 5]) -> bool {
        (0..5).all(|i| v[i] >= self.lower[i] && v[i] <= self.upper[i])
    }

    pub fn clamp(&self, v: [f64; 5]) -> [f64; 5] {
        std::array::from_fn(|i| v[i].clamp(self.lower[i], self.upper[i]))
    }

    pub fn midpoint(&self) -> [f64; 5] {
        std::array::from_fn(|i| 0.5 * (self.lower[i] + self.upper[i]))
    }

    /// Uniform tensor grid with `points` samples per axis, first axis slowest.
    pub fn tensor_grid(&self, points: usize) -> Vec<[f64; 5]> {
        let axis = |i: usize| -> Vec<f64> {
            if points == 1 {
                vec![0.5 * (self.lower[i] + self.upper[i])]
            } else {
                (0..points)
                    .map(|k| {
                        self.lower[i]
                            + (self.upper[i] - self.lower[i]) * k as f64 / (points - 1) as f64
                    })
                    .collect()
            }
        };
        let axes: Vec<Vec<f64>> = (0..5).map(axis).collect();
        let mut out = Vec::with_capacity(points.pow(5));
        for &a in &axes[0] {
            for &b in &axes[1] {
                for &c in &axes[2] {
                    for &d in &axes[3] {
                        for &e in &axes[4] {
                            out.push([a, b, c, d, e]);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Componentwise projection of a calibration vector onto a box.
pub fn clamp_to_box(theta: &CalibParams, bounds: &CalibBox) -> CalibParams {
    CalibParams::from_array(bounds.clamp(theta.to_array()))
}

/// Option contract data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionSpec {
    pub spot: f64,
    pub strike: f64,
    pub maturity: f64,
    pub style: Style,
}

impl OptionSpec {
    pub fn new(spot: f64, strike: f64, maturity: f64, style: Style) -> Result<Self> {
        if !(spot > 0.0 && strike > 0.0 && maturity > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "spot, strike and maturity must be positive (got {spot}, {strike}, {maturity})"
            )));
        }
        Ok(Self { spot, strike, maturity, style })
    }

    pub fn log_moneyness(&self) -> f64 {
        (self.spot / self.strike).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn feller_margin_examples() {
        assert_abs_diff_eq!(feller_margin(0.7, 0.3, 1.4), 0.35, epsilon = 1e-15);
        assert_abs_diff_eq!(feller_margin(0.1, 0.07, 0.1), 0.004, epsilon = 1e-15);
        assert_abs_diff_eq!(feller_margin(1.0, 0.1, 0.1), -0.98, epsilon = 1e-15);
    }

    #[test]
    fn payoff_examples() {
        assert_eq!(put_payoff_log(1.0, 0.0), 0.0);
        assert_abs_diff_eq!(put_payoff_log(1.0, 0.8f64.ln()), 0.2, epsilon = 1e-15);
        assert_eq!(put_payoff_log(1.0, 1.0), 0.0);
    }

    #[test]
    fn clamp_examples() {
        let b = ParamBox::calibration_default();
        let inside = CalibParams::new(0.5, -0.5, 0.2, 1.0, 0.1);
        assert_eq!(clamp_to_box(&inside, &b), inside);
        let high_xi = CalibParams::new(1.5, -0.5, 0.2, 1.0, 0.1);
        assert_eq!(clamp_to_box(&high_xi, &b).xi, 0.9);
        let low = CalibParams::new(-1.0, -2.0, -1.0, -1.0, -1.0);
        assert_eq!(clamp_to_box(&low, &b).to_array(), b.lower);
    }

    #[test]
    fn rho_bounds_shrink_inside_unit_interval() {
        let b = ParamBox::new([0.1, -1.0, 0.1, 0.1, 0.1], [1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(b.lower[1], -RHO_LIMIT);
        assert_eq!(b.upper[1], RHO_LIMIT);
    }

    #[test]
    fn invalid_box_rejected() {
        assert!(ParamBox::new([0.0; 5], [0.0; 5]).is_err());
    }

    #[test]
    fn tensor_grid_counts() {
        let b = ParamBox::model_domain();
        assert_eq!(b.tensor_grid(3).len(), 243);
        assert_eq!(b.tensor_grid(4).len(), 1024);
        let g = b.tensor_grid(2);
        assert_eq!(g[0], b.lower);
        assert_eq!(g[31], b.upper);
    }

    #[test]
    fn model_params_validation() {
        assert!(ModelParams::new(0.7, -0.8, 0.3, 1.4, 0.05).is_ok());
        assert!(ModelParams::new(0.7, -1.0, 0.3, 1.4, 0.05).is_err());
        assert!(ModelParams::new(0.0, -0.5, 0.3, 1.4, 0.05).is_err());
    }

    proptest! {
        #[test]
        fn clamp_is_idempotent_and_inside(v in proptest::array::uniform5(-10.0f64..10.0)) {
            let b = ParamBox::calibration_default();
            let once = b.clamp(v);
            prop_assert!(b.contains(&once));
            prop_assert_eq!(b.clamp(once), once);
        }

        #[test]
        fn feller_depends_on_product_only(
            xi in 0.01f64..2.0, g in 0.01f64..2.0, k in 0.01f64..5.0,
        ) {
            let m1 = feller_margin(xi, g, k);
            let m2 = feller_margin(xi, k, g);
            prop_assert!((m1 - m2).abs() <= 1e-12 * (1.0 + m1.abs()));
        }
    }
}
