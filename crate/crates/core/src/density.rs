//! Claims with an absolutely continuous law on a compact interval.
//!
//! The claim pays `f(s) = s` where `s` has density `c·ρ(s)` on `[lo, hi]`.
//! There are no stocks. Expectations are Gauss–Legendre sums.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::FiniteMarket;
use crate::quadrature::{GaussLegendre, SupportPoint};

/// Node count for normalization constants.
const NORMALIZER_NODES: usize = 400;

/// Named unnormalized densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Density {
    /// `ρ(s) = (s - lo)^alpha`.
    ShiftedPower { alpha: f64 },
}

impl Density {
    /// Registry lookup. `sec4` is `(s+1)^{3/2}` on the default support `[-1, 1]`.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "sec4" => Ok(Density::ShiftedPower { alpha: 1.5 }),
            "sec4-half" => Ok(Density::ShiftedPower { alpha: 0.5 }),
            "uniform" => Ok(Density::ShiftedPower { alpha: 0.0 }),
            other => Err(Error::Validation(format!("unknown density {other:?}"))),
        }
    }

    pub fn eval(&self, s: f64, lo: f64, hi: f64) -> f64 {
        if s < lo || s > hi {
            return 0.0;
        }
        self.eval_from_lo(s - lo)
    }

    /// Density as a function of the distance to the lower end of the support.
    pub fn eval_from_lo(&self, from_lo: f64) -> f64 {
        match *self {
            Density::ShiftedPower { alpha } => {
                if alpha == 0.0 {
                    1.0
                } else {
                    from_lo.powf(alpha)
                }
            }
        }
    }
}

/// `1 / ∫_lo^hi ρ` by graded high-order quadrature.
pub fn normalizer_for<F: Fn(f64) -> f64>(density: F, lo: f64, hi: f64) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::Numerical(format!("empty support [{lo}, {hi}]")));
    }
    let gl = GaussLegendre::new(NORMALIZER_NODES);
    let mass = gl.integrate_graded(lo, hi, |p| density(p.s));
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::Numerical(format!("density integrates to {mass}")));
    }
    Ok(1.0 / mass)
}

/// Continuous one-claim model with no stocks.
#[derive(Debug, Clone)]
pub struct DensityClaimModel {
    pub name: String,
    pub density: Density,
    pub lo: f64,
    pub hi: f64,
    pub quad_nodes: usize,
    pub normalizer: f64,
    rule: GaussLegendre,
    rule_double: GaussLegendre,
}

#[derive(Debug, Serialize, Deserialize)]
struct DensityFile {
    density: String,
    support: [f64; 2],
    #[serde(default = "default_nodes")]
    quad_nodes: usize,
}

fn default_nodes() -> usize {
    200
}

impl DensityClaimModel {
    pub fn new(name: &str, density: Density, lo: f64, hi: f64, quad_nodes: usize) -> Result<Self> {
        if quad_nodes < 2 {
            return Err(Error::Validation("quad_nodes must be at least 2".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Validation(format!("bad support [{lo}, {hi}]")));
        }
        let normalizer = {
            let gl = GaussLegendre::new(NORMALIZER_NODES);
            let mass = gl.integrate_graded(lo, hi, |p| density.eval_from_lo(p.from_lo));
            if !(mass > 0.0) || !mass.is_finite() {
                return Err(Error::Numerical(format!("density integrates to {mass}")));
            }
            1.0 / mass
        };
        Ok(Self {
            name: name.to_string(),
            density,
            lo,
            hi,
            quad_nodes,
            normalizer,
            rule: GaussLegendre::new(quad_nodes),
            rule_double: GaussLegendre::new(2 * quad_nodes),
        })
    }

    /// A registry density on `[lo, hi]`.
    pub fn named(name: &str, lo: f64, hi: f64, quad_nodes: usize) -> Result<Self> {
        Self::new(name, Density::by_name(name)?, lo, hi, quad_nodes)
    }

    /// Density `c(s+1)^{3/2}` on `[-1, 1]` with 200 nodes.
    pub fn sec4() -> Self {
        Self::named("sec4", -1.0, 1.0, 200).expect("built-in density")
    }

    pub fn with_nodes(&self, quad_nodes: usize) -> Result<Self> {
        Self::new(&self.name, self.density, self.lo, self.hi, quad_nodes)
    }

    pub fn rho(&self, s: f64) -> f64 {
        self.density.eval(s, self.lo, self.hi)
    }

    /// `c·∫ g(s) ρ(s) ds` with the plain `N`-node rule.
    pub fn quad_expectation<G: Fn(f64) -> f64>(&self, g: G) -> Result<f64> {
        self.expectation_with(&self.rule, g)
    }

    /// Same with the `2N`-node rule, for convergence checks.
    pub fn quad_expectation_double<G: Fn(f64) -> f64>(&self, g: G) -> Result<f64> {
        self.expectation_with(&self.rule_double, g)
    }

    /// Endpoint-graded variant for integrands singular at `lo` or `hi`.
    pub fn quad_expectation_graded<G: Fn(SupportPoint) -> f64>(&self, g: G, doubled: bool) -> Result<f64> {
        let rule = if doubled { &self.rule_double } else { &self.rule };
        let mut bad = None;
        let raw = rule.integrate_graded(self.lo, self.hi, |p| {
            let v = g(p) * self.density.eval_from_lo(p.from_lo);
            if v.is_nan() {
                bad = Some(p.s);
            }
            v
        });
        if let Some(s) = bad {
            return Err(Error::Numerical(format!("integrand is NaN at node {s}")));
        }
        Ok(self.normalizer * raw)
    }

    fn expectation_with<G: Fn(f64) -> f64>(&self, rule: &GaussLegendre, g: G) -> Result<f64> {
        let mut bad = None;
        let raw = rule.integrate(self.lo, self.hi, |s| {
            let v = g(s) * self.rho(s);
            if v.is_nan() {
                bad = Some(s);
            }
            v
        });
        if let Some(s) = bad {
            return Err(Error::Numerical(format!("integrand is NaN at node {s}")));
        }
        Ok(self.normalizer * raw)
    }

    /// Two-state market sharing this model's endowment cone and price set:
    /// with no stocks and payoff `s`, positivity of `a + b s` on `[lo, hi]`
    /// only involves the endpoints.
    pub fn support_market(&self) -> FiniteMarket {
        FiniteMarket::new(
            vec!["lo".into(), "hi".into()],
            vec![0.5, 0.5],
            vec![Vec::new(), Vec::new()],
            vec![vec![self.lo], vec![self.hi]],
        )
        .expect("support market is valid")
    }
}

/// Load a density model file `{"density": NAME, "support": [lo, hi], "quad_nodes": N}`.
pub fn load_density_model(path: impl AsRef<Path>) -> Result<DensityClaimModel> {
    let text = std::fs::read_to_string(path)?;
    parse_density_model(&text)
}

pub fn parse_density_model(text: &str) -> Result<DensityClaimModel> {
    let raw: DensityFile = serde_json::from_str(text)?;
    DensityClaimModel::named(&raw.density, raw.support[0], raw.support[1], raw.quad_nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sec4_normalizer_is_closed_form() {
        let m = DensityClaimModel::sec4();
        let exact = 5.0 / (8.0 * 2f64.sqrt());
        assert!((m.normalizer - exact).abs() < 1e-12 * exact);
    }

    #[test]
    fn constant_densities() {
        assert!((normalizer_for(|_| 1.0, 0.0, 1.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((normalizer_for(|_| 2.0, 0.0, 1.0).unwrap() - 0.5).abs() < 1e-14);
        assert!(normalizer_for(|_| 0.0, 0.0, 1.0).is_err());
        assert!(normalizer_for(|_| -1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn expectations_on_sec4() {
        let m = DensityClaimModel::sec4();
        assert!((m.quad_expectation(|_| 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((m.quad_expectation(|s| s).unwrap() - 3.0 / 7.0).abs() < 1e-10);
    }

    #[test]
    fn nan_integrand_is_reported() {
        let m = DensityClaimModel::sec4();
        let err = m.quad_expectation(|s| if s > 0.5 { f64::NAN } else { s }).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn file_round_trip_and_errors() {
        let m = parse_density_model(r#"{"density":"sec4","support":[-1,1],"quad_nodes":64}"#).unwrap();
        assert_eq!(m.quad_nodes, 64);
        assert!(parse_density_model(r#"{"density":"nope","support":[-1,1]}"#).is_err());
        assert!(parse_density_model(r#"{"density":"sec4","support":[1,-1]}"#).is_err());
        assert!(parse_density_model(r#"{"density":"sec4","support":[-1,1],"quad_nodes":1}"#).is_err());
    }

    #[test]
    fn support_market_shape() {
        let mkt = DensityClaimModel::sec4().support_market();
        assert_eq!((mkt.m(), mkt.d(), mkt.n()), (2, 0, 1));
        assert_eq!(mkt.claim(0), vec![-1.0, 1.0]);
    }
}
