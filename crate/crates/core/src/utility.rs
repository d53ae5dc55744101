//! Utility functions satisfying the Inada conditions, with their convex conjugates.
//!
//! Utilities are extended to the whole real line by `U(x) = -inf` for `x < 0`
//! and `U(0) = U(0+)`, so `U(0) = 0` for power utility and `-inf` for log.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supported utility families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum UtilityFn {
    /// `U(x) = x^gamma` with `gamma` in (0, 1).
    Power { gamma: f64 },
    /// `U(x) = ln x`.
    Log,
}

impl UtilityFn {
    pub fn power(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Validation(format!(
                "power utility needs gamma in (0,1), got {gamma}"
            )));
        }
        Ok(UtilityFn::Power { gamma })
    }

    pub fn sqrt() -> Self {
        UtilityFn::Power { gamma: 0.5 }
    }

    pub fn log() -> Self {
        UtilityFn::Log
    }

    /// Parse a `(kind, gamma)` pair as given on the command line.
    pub fn from_spec(kind: &str, gamma: Option<f64>) -> Result<Self> {
        match kind {
            "log" => Ok(UtilityFn::Log),
            "power" => Self::power(gamma.unwrap_or(0.5)),
            "sqrt" => Ok(Self::sqrt()),
            other => Err(Error::Validation(format!("unknown utility kind {other:?}"))),
        }
    }

    /// `U(0+)`, which is `-inf` for log.
    pub fn at_zero(&self) -> f64 {
        match self {
            UtilityFn::Power { .. } => 0.0,
            UtilityFn::Log => f64::NEG_INFINITY,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        if x == 0.0 {
            return self.at_zero();
        }
        match *self {
            UtilityFn::Power { gamma } => x.powf(gamma),
            UtilityFn::Log => x.ln(),
        }
    }

    /// `U'(x)` on `(0, inf)`; `+inf` at zero.
    pub fn derivative(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::INFINITY;
        }
        match *self {
            UtilityFn::Power { gamma } => gamma * x.powf(gamma - 1.0),
            UtilityFn::Log => 1.0 / x,
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        match *self {
            UtilityFn::Power { gamma } => gamma * (gamma - 1.0) * x.powf(gamma - 2.0),
            UtilityFn::Log => -1.0 / (x * x),
        }
    }

    /// Inverse marginal utility `I = (U')^{-1}`.
    pub fn inverse_marginal(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return f64::INFINITY;
        }
        match *self {
            UtilityFn::Power { gamma } => (y / gamma).powf(1.0 / (gamma - 1.0)),
            UtilityFn::Log => 1.0 / y,
        }
    }

    /// Convex conjugate `V(y) = sup_x (U(x) - x y)`; `+inf` for `y <= 0`.
    pub fn conjugate(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return f64::INFINITY;
        }
        match *self {
            UtilityFn::Power { gamma } => {
                let x = self.inverse_marginal(y);
                x * y * (1.0 - gamma) / gamma
            }
            UtilityFn::Log => -y.ln() - 1.0,
        }
    }

    /// `V'(y) = -I(y)`.
    pub fn conjugate_derivative(&self, y: f64) -> f64 {
        -self.inverse_marginal(y)
    }

    /// `V''(y) = -1 / U''(I(y))`.
    pub fn conjugate_second_derivative(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return f64::INFINITY;
        }
        match *self {
            UtilityFn::Power { gamma } => {
                let x = self.inverse_marginal(y);
                x / ((1.0 - gamma) * y)
            }
            UtilityFn::Log => 1.0 / (y * y),
        }
    }

    /// Numerical Inada check: `U'(10^-k)` large and `U'(10^k)` small.
    pub fn satisfies_inada(&self, k: i32) -> bool {
        let small = 10f64.powi(-k);
        let large = 10f64.powi(k);
        self.derivative(small) > 10f64.powi(k / 4).max(10.0)
            && self.derivative(large) < 10f64.powi(-(k / 4)).min(0.1)
    }

    pub fn label(&self) -> String {
        match self {
            UtilityFn::Power { gamma } => format!("power({gamma})"),
            UtilityFn::Log => "log".to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn extension_at_zero_and_negative() {
        assert_eq!(UtilityFn::sqrt().value(0.0), 0.0);
        assert_eq!(UtilityFn::Log.value(0.0), f64::NEG_INFINITY);
        assert_eq!(UtilityFn::sqrt().value(-1e-12), f64::NEG_INFINITY);
    }

    #[test]
    fn known_conjugates() {
        // V(y) = 1/(4y) for sqrt, -ln y - 1 for log
        for &y in &[0.1, 0.5, 1.0, 3.0] {
            assert_relative_eq!(UtilityFn::sqrt().conjugate(y), 1.0 / (4.0 * y), max_relative = 1e-14);
            assert_relative_eq!(UtilityFn::Log.conjugate(y), -y.ln() - 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn conjugate_identity_pointwise() {
        for u in [UtilityFn::sqrt(), UtilityFn::power(0.3).unwrap(), UtilityFn::Log] {
            for &y in &[0.05, 0.7, 2.0, 11.0] {
                let x = u.inverse_marginal(y);
                assert_relative_eq!(u.derivative(x), y, max_relative = 1e-12);
                assert_relative_eq!(u.conjugate(y), u.value(x) - x * y, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn conjugate_derivatives_match_finite_differences() {
        for u in [UtilityFn::power(0.7).unwrap(), UtilityFn::Log] {
            let y = 0.8;
            let h = 1e-6;
            let fd = (u.conjugate(y + h) - u.conjugate(y - h)) / (2.0 * h);
            assert_relative_eq!(u.conjugate_derivative(y), fd, max_relative = 1e-7);
            let fd2 = (u.conjugate_derivative(y + h) - u.conjugate_derivative(y - h)) / (2.0 * h);
            assert_relative_eq!(u.conjugate_second_derivative(y), fd2, max_relative = 1e-6);
        }
    }

    #[test]
    fn inada() {
        assert!(UtilityFn::sqrt().satisfies_inada(8));
        assert!(UtilityFn::Log.satisfies_inada(8));
    }

    #[test]
    fn rejects_bad_gamma() {
        assert!(UtilityFn::power(1.0).is_err());
        assert!(UtilityFn::power(0.0).is_err());
        assert!(UtilityFn::from_spec("exp", None).is_err());
    }
}
