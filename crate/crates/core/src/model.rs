//! A claim model is either a finite-state market or a continuous density claim.

use serde::Serialize;

use crate::arbitrage::{afp_set, is_arbitrage_free, ArbitrageVerdict, PriceSet};
use crate::cone::{build_kbar, PolyCone};
use crate::config::Tolerances;
use crate::density::DensityClaimModel;
use crate::error::{Error, Result};
use crate::lp::{Cmp, LinearProgram, LpOutcome};
use crate::market::{Endowment, FiniteMarket};
use crate::optimize::{density_expectation, value_u, value_u_density, ValueResult};
use crate::utility::UtilityFn;

/// Relative gap between `N`- and `2N`-node integrals above which an
/// expectation is treated as divergent.
const DIVERGENCE_GAP: f64 = 1e-6;

#[derive(Debug, Clone)]
pub enum ClaimModel {
    Finite(FiniteMarket),
    Density(DensityClaimModel),
}

/// `E[U'(Ŵ)·(1, f)]` at an endowment, or the reason it does not exist.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum MarginalUtility {
    Finite(Vec<f64>),
    /// Some state has zero optimal wealth and `U'(0) = ∞`.
    Infinite,
    /// The quadrature does not settle as nodes are doubled.
    Divergent { coarse: Vec<f64>, fine: Vec<f64> },
}

impl ClaimModel {
    pub fn n(&self) -> usize {
        match self {
            ClaimModel::Finite(m) => m.n(),
            ClaimModel::Density(_) => 1,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ClaimModel::Finite(m) => format!("finite(m={}, d={}, n={})", m.m(), m.d(), m.n()),
            ClaimModel::Density(d) => format!("density({}, [{}, {}], N={})", d.name, d.lo, d.hi, d.quad_nodes),
        }
    }

    pub fn value(&self, u: &UtilityFn, e: &Endowment, tol: &Tolerances) -> Result<ValueResult> {
        match self {
            ClaimModel::Finite(m) => value_u(m, u, e, tol),
            ClaimModel::Density(d) => value_u_density(d, u, e, tol),
        }
    }

    pub fn u(&self, u: &UtilityFn, e: &Endowment, tol: &Tolerances) -> Result<f64> {
        Ok(self.value(u, e, tol)?.value)
    }

    /// A finite market with the same endowment cone and arbitrage-free prices.
    pub fn cone_market(&self) -> FiniteMarket {
        match self {
            ClaimModel::Finite(m) => m.clone(),
            ClaimModel::Density(d) => d.support_market(),
        }
    }

    pub fn kbar(&self) -> Result<PolyCone> {
        build_kbar(&self.cone_market())
    }

    pub fn afp_set(&self, tol: &Tolerances) -> Result<PriceSet> {
        afp_set(&self.cone_market(), tol)
    }

    pub fn is_arbitrage_free(&self, prices: &[f64], tol: &Tolerances) -> Result<ArbitrageVerdict> {
        is_arbitrage_free(&self.cone_market(), prices, tol)
    }

    /// The candidate gradient `(E[U'(Ŵ)], E[U'(Ŵ) f])` at `e`.
    pub fn marginal_utility(&self, u: &UtilityFn, e: &Endowment, tol: &Tolerances) -> Result<MarginalUtility> {
        match self {
            ClaimModel::Finite(mkt) => {
                let r = value_u(mkt, u, e, tol)?;
                let wealth = r
                    .optimal_wealth
                    .ok_or_else(|| Error::Precondition("u(e) = -inf".into()))?;
                if wealth.iter().any(|&w| w <= 0.0) {
                    return Ok(MarginalUtility::Infinite);
                }
                let mut g = vec![0.0; 1 + mkt.n()];
                for (w, &wealth_w) in wealth.iter().enumerate() {
                    let mu = mkt.probs[w] * u.derivative(wealth_w);
                    g[0] += mu;
                    for j in 0..mkt.n() {
                        g[1 + j] += mu * mkt.claim_payoffs[w][j];
                    }
                }
                Ok(MarginalUtility::Finite(g))
            }
            ClaimModel::Density(model) => {
                let (a, b) = (e.x, e.q[0]);
                let integrate = |doubled: bool| -> Result<Vec<f64>> {
                    Ok(vec![
                        density_expectation(model, a, b, |w, _| u.derivative(w), doubled)?,
                        density_expectation(model, a, b, |w, s| u.derivative(w) * s, doubled)?,
                    ])
                };
                let coarse = integrate(false)?;
                let fine = integrate(true)?;
                if coarse.iter().chain(&fine).any(|v| !v.is_finite()) {
                    return Ok(MarginalUtility::Infinite);
                }
                let scale = fine.iter().fold(1e-300f64, |acc, v| acc.max(v.abs()));
                let gap = coarse.iter().zip(&fine).fold(0.0f64, |acc, (c, f)| acc.max((c - f).abs()));
                if gap > DIVERGENCE_GAP * scale {
                    return Ok(MarginalUtility::Divergent { coarse, fine });
                }
                Ok(MarginalUtility::Finite(fine))
            }
        }
    }

    /// `{t : e + t·dir ∈ K̄}` as `(t_lo, t_hi)`, possibly infinite.
    /// `None` when no `t` is admissible.
    pub fn line_range(&self, e: &Endowment, dir: &[f64]) -> Result<Option<(f64, f64)>> {
        let k = self.kbar()?;
        let z0 = e.to_vec();
        let nv = 1 + k.aux_dim;
        let mut out = [0.0; 2];
        for (i, maximize) in [false, true].into_iter().enumerate() {
            let mut obj = vec![0.0; nv];
            obj[0] = 1.0;
            let mut lp = if maximize {
                LinearProgram::maximize(obj)
            } else {
                LinearProgram::minimize(obj)
            };
            for a in &k.halfspaces {
                let (az, ah) = a.split_at(k.dim);
                let mut coeffs = vec![dot(az, dir)];
                coeffs.extend_from_slice(ah);
                lp.add(coeffs, Cmp::Ge, -dot(az, &z0));
            }
            out[i] = match lp.solve()? {
                LpOutcome::Optimal(s) => s.objective,
                LpOutcome::Infeasible => return Ok(None),
                LpOutcome::Unbounded => {
                    if maximize {
                        f64::INFINITY
                    } else {
                        f64::NEG_INFINITY
                    }
                }
            };
        }
        Ok(Some((out[0], out[1])))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sec4_boundary_gradient() {
        let model = ClaimModel::Density(DensityClaimModel::sec4());
        let c = 5.0 / (8.0 * 2f64.sqrt());
        for x in [0.25, 1.0, 9.0] {
            match model.marginal_utility(&UtilityFn::sqrt(), &Endowment::scalar(x, x), &Tolerances::default()).unwrap() {
                MarginalUtility::Finite(g) => {
                    assert!((g[0] - c / x.sqrt()).abs() < 1e-9 * g[0], "{g:?}");
                    assert!((g[1] - c / (3.0 * x.sqrt())).abs() < 1e-9 * g[1], "{g:?}");
                }
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn log_gradient_diverges_at_lower_edge() {
        let model = ClaimModel::Density(DensityClaimModel::sec4());
        let g = model.marginal_utility(&UtilityFn::log(), &Endowment::scalar(1.0, -1.0), &Tolerances::default()).unwrap();
        assert!(matches!(g, MarginalUtility::Divergent { .. } | MarginalUtility::Infinite), "{g:?}");
    }

    #[test]
    fn finite_boundary_gradient_is_infinite() {
        let mkt = FiniteMarket::from_matrices(vec![0.5, 0.5], vec![vec![], vec![]], vec![vec![1.0], vec![-1.0]]).unwrap();
        let model = ClaimModel::Finite(mkt);
        let g = model.marginal_utility(&UtilityFn::sqrt(), &Endowment::scalar(1.0, 1.0), &Tolerances::default()).unwrap();
        assert_eq!(g, MarginalUtility::Infinite);
    }

    #[test]
    fn line_range_on_sec4_section() {
        let model = ClaimModel::Density(DensityClaimModel::sec4());
        // e + t(-p, 1) with p = 0 from (1, 0): |t| ≤ 1
        let (lo, hi) = model.line_range(&Endowment::scalar(1.0, 0.0), &[0.0, 1.0]).unwrap().unwrap();
        assert!((lo + 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        // p = -1 direction (1, 1) is a recession direction
        let (_, hi) = model.line_range(&Endowment::scalar(1.0, 0.0), &[1.0, 1.0]).unwrap().unwrap();
        assert_eq!(hi, f64::INFINITY);
    }
}
