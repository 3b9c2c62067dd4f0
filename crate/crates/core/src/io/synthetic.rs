/// Maturities of the synthetic ladder, in years.
pub const SYNTHETIC_MATURITIES: [f64; 5] = [1.0 / 6.0, 0.5, 0.75, 1.0, 2.0];

/// Spot of the synthetic ladder.
pub const SYNTHETIC_SPOT: f64 = 1.0;

/// Risk-free rate of the synthetic experiments.
pub const SYNTHETIC_RATE: f64 = 0.05;

/// Nested `(maturity, strike)` ladder: five at-the-money strikes at the first
/// maturity, widened by two strikes on each side per later maturity.
pub fn synthetic_ladder() -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(65);
    for (i, &t) in SYNTHETIC_MATURITIES.iter().enumerate() {
        let half = 2 + 2 * i as i32;
        for j in -half..=half {
            out.push((t, 1.0 + 0.025 * j as f64));
        }
    }
    out
}
