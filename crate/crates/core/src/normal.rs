//! Standard normal helpers. Tails are computed through `erfc` so that
//! probabilities down to ~1e-300 keep full relative precision.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::FRAC_1_SQRT_2;

/// Φ(x).
pub fn cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Q(x) = 1 − Φ(x).
pub fn q(x: f64) -> f64 {
    cdf(-x)
}

/// Φ⁻¹(p) for p ∈ [0, 1].
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// P(a < Z < b), evaluated on whichever side of zero keeps precision.
pub fn interval(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if a > 0.0 {
        (q(a) - q(b)).max(0.0)
    } else {
        (cdf(b) - cdf(a)).max(0.0)
    }
}

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert!((cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((q(1.959963984540054) - 0.025).abs() < 1e-15);
        // Q(5) from a 40-digit table
        assert!((q(5.0) / 2.866515718791939e-7 - 1.0).abs() < 1e-13);
        assert!((q(-5.0) - (1.0 - 2.866515718791939e-7)).abs() < 1e-16);
    }

    #[test]
    fn quantile_round_trips() {
        for &p in &[1e-12, 5e-7, 1e-3, 0.1, 0.5, 0.9, 0.975] {
            let x = quantile(p);
            assert!((cdf(x) / p - 1.0).abs() < 1e-12, "p = {p}");
        }
        assert!((quantile(1.0 - 5e-7) - 4.891638475698).abs() < 1e-9);
    }

    #[test]
    fn interval_is_symmetric_and_precise() {
        let a = interval(6.0, 7.0);
        let b = interval(-7.0, -6.0);
        assert_eq!(a, b);
        assert!((a - (q(6.0) - q(7.0))).abs() < 1e-24);
        assert_eq!(interval(1.0, 1.0), 0.0);
    }
}
