//! Subdifferentials of `u` and marginal utility-based prices.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arbitrage::Interval;
use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::market::Endowment;
use crate::model::{ClaimModel, MarginalUtility};
use crate::optimize::{golden_section_max, value_u};
use crate::utility::UtilityFn;

/// Central-difference step for the gradient cross-check.
pub const FD_STEP: f64 = 1e-5;
/// Allowed relative disagreement between the gradient and its finite-difference estimate.
pub const FD_AGREEMENT: f64 = 1e-4;
const CLOUD_SAMPLES: usize = 64;

/// `∂u(e)` as base points plus recession directions, both given as `(y, r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgradientSet {
    pub base_points: Vec<Vec<f64>>,
    pub recession_dirs: Vec<Vec<f64>>,
    pub empty: bool,
    pub boundary: bool,
    /// Relative error of the finite-difference check at interior points.
    pub fd_error: Option<f64>,
    pub note: Option<String>,
}

impl SubgradientSet {
    fn empty(boundary: bool, note: &str) -> Self {
        Self {
            base_points: Vec::new(),
            recession_dirs: Vec::new(),
            empty: true,
            boundary,
            fd_error: None,
            note: Some(note.to_string()),
        }
    }

    pub fn is_singleton(&self) -> bool {
        !self.empty && self.base_points.len() == 1 && self.recession_dirs.is_empty()
    }
}

fn require_finite(model: &ClaimModel, u: &UtilityFn, e: &Endowment, tol: &Tolerances) -> Result<f64> {
    if e.q.len() != model.n() {
        return Err(Error::Dimension(format!("endowment has {} claims, model has {}", e.q.len(), model.n())));
    }
    let v = model.u(u, e, tol)?;
    if v == f64::NEG_INFINITY {
        return Err(Error::Precondition(format!("u(e) = -inf at e = {e:?}")));
    }
    Ok(v)
}

/// `∂u(e)`.
///
/// Interior endowments have the single gradient `(E[U'(Ŵ)], E[U'(Ŵ) f])`,
/// checked against central differences. On the boundary the same vector is
/// the base point when its expectation converges, and the active facet
/// normals of `K̄` are recession directions. A divergent or infinite
/// expectation means no supporting hyperplane exists.
pub fn subdifferential(model: &ClaimModel, u: &UtilityFn, e: &Endowment, tol: &Tolerances) -> Result<SubgradientSet> {
    require_finite(model, u, e, tol)?;
    let boundary = model.value(u, e, tol)?.boundary;
    let g = match model.marginal_utility(u, e, tol)? {
        MarginalUtility::Finite(g) => g,
        MarginalUtility::Infinite => return Ok(SubgradientSet::empty(boundary, "marginal utility is infinite")),
        MarginalUtility::Divergent { .. } => {
            return Ok(SubgradientSet::empty(boundary, "marginal utility integral diverges"))
        }
    };
    if !boundary {
        let fd = finite_difference_gradient(model, u, e, tol)?;
        let fd_error = fd.map(|fd| {
            let scale = g.iter().fold(1e-12f64, |a, v| a.max(v.abs()));
            fd.iter().zip(&g).fold(0.0f64, |a, (x, y)| a.max((x - y).abs())) / scale
        });
        if let Some(err) = fd_error {
            if err > FD_AGREEMENT {
                return Err(Error::Precision(format!(
                    "gradient {g:?} disagrees with finite differences (relative error {err:.3e})"
                )));
            }
        }
        return Ok(SubgradientSet {
            base_points: vec![g],
            recession_dirs: Vec::new(),
            empty: false,
            boundary: false,
            fd_error,
            note: None,
        });
    }
    let z = e.to_vec();
    let scale = 1.0 + e.norm1();
    let dirs = model.kbar()?.active_rows(&z, 1e-9 * scale);
    Ok(SubgradientSet {
        base_points: vec![g],
        recession_dirs: dirs,
        empty: false,
        boundary: true,
        fd_error: None,
        note: None,
    })
}

/// Central differences of `u`; `None` if a probe leaves the finite region.
pub fn finite_difference_gradient(
    model: &ClaimModel,
    u: &UtilityFn,
    e: &Endowment,
    tol: &Tolerances,
) -> Result<Option<Vec<f64>>> {
    let z = e.to_vec();
    let mut out = Vec::with_capacity(z.len());
    for i in 0..z.len() {
        let mut dir = vec![0.0; z.len()];
        dir[i] = 1.0;
        let up = model.u(u, &e.shifted(&dir, FD_STEP), tol)?;
        let down = model.u(u, &e.shifted(&dir, -FD_STEP), tol)?;
        if !up.is_finite() || !down.is_finite() {
            return Ok(None);
        }
        out.push((up - down) / (2.0 * FD_STEP));
    }
    Ok(Some(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Subdifferential,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum MarginalShape {
    Interval(Interval),
    /// Sampled prices, for several claims.
    Cloud { points: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalPriceSet {
    pub shape: MarginalShape,
    pub provenance: Provenance,
    /// `r / y` at the base points.
    pub base_prices: Vec<Vec<f64>>,
    /// Limits of `r / y` along recession directions; arbitrage prices, never attained.
    pub limit_prices: Vec<Vec<f64>>,
}

impl MarginalPriceSet {
    pub fn is_empty(&self) -> bool {
        match &self.shape {
            MarginalShape::Interval(i) => i.is_empty(),
            MarginalShape::Cloud { points } => points.is_empty(),
        }
    }

    pub fn interval(&self) -> Option<Interval> {
        match &self.shape {
            MarginalShape::Interval(i) => Some(*i),
            MarginalShape::Cloud { .. } => None,
        }
    }

    pub fn is_singleton(&self) -> bool {
        match &self.shape {
            MarginalShape::Interval(i) => i.is_singleton(),
            MarginalShape::Cloud { points } => points.len() == 1,
        }
    }
}

fn ratio(g: &[f64]) -> Vec<f64> {
    g[1..].iter().map(|r| r / g[0]).collect()
}

fn limit_ratio(a: &[f64]) -> Vec<f64> {
    if a[0].abs() <= 1e-14 {
        a[1..].iter().map(|r| if *r > 0.0 { f64::INFINITY } else if *r < 0.0 { f64::NEG_INFINITY } else { 0.0 }).collect()
    } else {
        ratio(a)
    }
}

/// `P(e; U) = {r / y : (y, r) ∈ ∂u(e)}`.
///
/// For one claim the result is an interval whose recession limits are open
/// ends; a base-point end is closed iff the direct check passes there.
pub fn marginal_set_formula(model: &ClaimModel, u: &UtilityFn, e: &Endowment, tol: &Tolerances) -> Result<MarginalPriceSet> {
    let sub = subdifferential(model, u, e, tol)?;
    let base_prices: Vec<Vec<f64>> = sub.base_points.iter().filter(|g| g[0] > 0.0).map(|g| ratio(g)).collect();
    let limit_prices: Vec<Vec<f64>> = sub.recession_dirs.iter().map(|a| limit_ratio(a)).collect();
    if sub.empty || base_prices.is_empty() {
        let shape = if model.n() == 1 {
            MarginalShape::Interval(Interval::empty())
        } else {
            MarginalShape::Cloud { points: Vec::new() }
        };
        return Ok(MarginalPriceSet {
            shape,
            provenance: Provenance::Subdifferential,
            base_prices,
            limit_prices,
        });
    }
    if model.n() == 1 {
        let b = base_prices.iter().map(|p| p[0]);
        let l = limit_prices.iter().map(|p| p[0]);
        let bmin = b.clone().fold(f64::INFINITY, f64::min);
        let bmax = b.fold(f64::NEG_INFINITY, f64::max);
        let lmin = l.clone().fold(f64::INFINITY, f64::min);
        let lmax = l.fold(f64::NEG_INFINITY, f64::max);
        let (lo, lo_closed) = if lmin < bmin {
            (lmin, false)
        } else {
            (bmin, marginal_check_direct(model, u, e, &[bmin], tol)?.passes)
        };
        let (hi, hi_closed) = if lmax > bmax {
            (lmax, false)
        } else {
            (bmax, marginal_check_direct(model, u, e, &[bmax], tol)?.passes)
        };
        return Ok(MarginalPriceSet {
            shape: MarginalShape::Interval(Interval {
                lo,
                hi,
                lo_closed,
                hi_closed,
            }),
            provenance: Provenance::Subdifferential,
            base_prices,
            limit_prices,
        });
    }
    let mut points = base_prices.clone();
    if !sub.recession_dirs.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let base = &sub.base_points[0];
        for _ in 0..CLOUD_SAMPLES {
            let mut g = base.clone();
            for a in &sub.recession_dirs {
                let lam = rng.random_range(0.0..1.0f64).powi(2) * 10.0 * base[0] / a[0].abs().max(1e-3);
                for (gi, ai) in g.iter_mut().zip(a) {
                    *gi += lam * ai;
                }
            }
            if g[0] > 0.0 {
                points.push(ratio(&g));
            }
        }
    }
    Ok(MarginalPriceSet {
        shape: MarginalShape::Cloud { points },
        provenance: Provenance::Subdifferential,
        base_prices,
        limit_prices,
    })
}

/// Result of testing the definition of a marginal price directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectCheck {
    pub passes: bool,
    /// `p` admits arbitrage; trading along the section improves without bound.
    pub arbitrage: bool,
    pub base_value: f64,
    pub best_value: f64,
    /// `sup_{q'} u(x - q'·p, q + q') - u(x, q)`, clipped at 0 below.
    pub gain: f64,
    /// Claim quantity `q'` achieving the supremum (or an improving ray).
    pub best_trade: Vec<f64>,
}

/// Does the agent at `e` neither buy nor sell at price `p`?
pub fn marginal_check_direct(
    model: &ClaimModel,
    u: &UtilityFn,
    e: &Endowment,
    prices: &[f64],
    tol: &Tolerances,
) -> Result<DirectCheck> {
    let base = require_finite(model, u, e, tol)?;
    if prices.len() != model.n() {
        return Err(Error::Dimension(format!("{} prices for {} claims", prices.len(), model.n())));
    }
    let verdict = model.is_arbitrage_free(prices, tol)?;
    if !verdict.is_free() {
        let ray = verdict.certificate().map(|z| z[1..].to_vec()).unwrap_or_default();
        return Ok(DirectCheck {
            passes: false,
            arbitrage: true,
            base_value: base,
            best_value: f64::INFINITY,
            gain: f64::INFINITY,
            best_trade: ray,
        });
    }
    let (best, trade) = match model {
        ClaimModel::Finite(mkt) => {
            let aug = mkt.with_claims_traded(prices);
            let r = value_u(&aug, u, e, tol)?;
            let trade = r
                .optimal_strategy
                .map(|h| h[mkt.d()..].to_vec())
                .unwrap_or_else(|| vec![0.0; mkt.n()]);
            (r.value, trade)
        }
        ClaimModel::Density(_) => {
            let (t, v) = section_search(model, u, e, prices[0], tol)?;
            (v, vec![t])
        }
    };
    let gain = (best - base).max(0.0);
    Ok(DirectCheck {
        passes: gain <= tol.marginal,
        arbitrage: false,
        base_value: base,
        best_value: best.max(base),
        gain,
        best_trade: trade,
    })
}

/// Maximize `t ↦ u(e + t(-p, 1))` over the admissible segment (one claim).
fn section_search(model: &ClaimModel, u: &UtilityFn, e: &Endowment, p: f64, tol: &Tolerances) -> Result<(f64, f64)> {
    let dir = [-p, 1.0];
    let (lo, hi) = model
        .line_range(e, &dir)?
        .ok_or_else(|| Error::Precondition("endowment outside the endowment cone".into()))?;
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Unbounded);
    }
    let mut err = None;
    let (t, v) = golden_section_max(
        |t| match model.u(u, &e.shifted(&dir, t), tol) {
            Ok(v) => v,
            Err(x) => {
                err = Some(x);
                f64::NEG_INFINITY
            }
        },
        lo,
        hi,
        1e-13,
    );
    if let Some(x) = err {
        return Err(x);
    }
    Ok((t, v))
}

/// The maximizer of `u` over the section `{(x', q') ∈ K̄ : x' + q'·p = x0}`.
pub fn section_maximizer(model: &ClaimModel, u: &UtilityFn, prices: &[f64], x0: f64, tol: &Tolerances) -> Result<(Endowment, f64)> {
    if !model.is_arbitrage_free(prices, tol)?.is_free() {
        return Err(Error::Precondition(format!("price {prices:?} is not arbitrage-free")));
    }
    let n = model.n();
    match model {
        ClaimModel::Finite(mkt) => {
            let aug = mkt.with_claims_traded(prices);
            let r = value_u(&aug, u, &Endowment::new(x0, vec![0.0; n]), tol)?;
            let h = r
                .optimal_strategy
                .ok_or_else(|| Error::Precondition("section has u = -inf".into()))?;
            let q: Vec<f64> = h[mkt.d()..].to_vec();
            let x = x0 - q.iter().zip(prices).map(|(a, b)| a * b).sum::<f64>();
            Ok((Endowment::new(x, q), r.value))
        }
        ClaimModel::Density(_) => {
            let start = Endowment::new(x0, vec![0.0]);
            let (t, v) = section_search(model, u, &start, prices[0], tol)?;
            Ok((start.shifted(&[-prices[0], 1.0], t), v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::DensityClaimModel;
    use crate::market::FiniteMarket;

    fn two_state() -> ClaimModel {
        ClaimModel::Finite(
            FiniteMarket::from_matrices(vec![0.5, 0.5], vec![vec![], vec![]], vec![vec![1.0], vec![-1.0]]).unwrap(),
        )
    }

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn log_two_state_gradient_at_one_zero() {
        let s = subdifferential(&two_state(), &UtilityFn::log(), &Endowment::scalar(1.0, 0.0), &tol()).unwrap();
        assert!(s.is_singleton());
        assert!((s.base_points[0][0] - 1.0).abs() < 1e-12);
        assert!(s.base_points[0][1].abs() < 1e-12);
        assert!(s.fd_error.unwrap() < 1e-6);
    }

    #[test]
    fn log_two_state_marginal_price() {
        let e = Endowment::scalar(2.0, 0.5);
        let set = marginal_set_formula(&two_state(), &UtilityFn::log(), &e, &tol()).unwrap();
        let i = set.interval().unwrap();
        assert!(i.is_singleton());
        assert!((i.lo + 0.25).abs() < 1e-12);
        assert!(marginal_check_direct(&two_state(), &UtilityFn::log(), &e, &[-0.25], &tol()).unwrap().passes);
        assert!(!marginal_check_direct(&two_state(), &UtilityFn::log(), &e, &[-0.2], &tol()).unwrap().passes);
    }

    #[test]
    fn sqrt_two_state_boundary_is_empty() {
        let e = Endowment::scalar(1.0, 1.0);
        let s = subdifferential(&two_state(), &UtilityFn::sqrt(), &e, &tol()).unwrap();
        assert!(s.empty);
        assert!(marginal_set_formula(&two_state(), &UtilityFn::sqrt(), &e, &tol()).unwrap().is_empty());
    }

    #[test]
    fn sec4_boundary_interval() {
        let model = ClaimModel::Density(DensityClaimModel::sec4());
        let e = Endowment::scalar(1.0, 1.0);
        let s = subdifferential(&model, &UtilityFn::sqrt(), &e, &tol()).unwrap();
        assert_eq!(s.recession_dirs.len(), 1);
        let a = &s.recession_dirs[0];
        assert!((a[0] + a[1]).abs() < 1e-12 && a[0] > 0.0);
        let set = marginal_set_formula(&model, &UtilityFn::sqrt(), &e, &tol()).unwrap();
        let i = set.interval().unwrap();
        assert!((i.lo + 1.0).abs() < 1e-12 && !i.lo_closed);
        assert!((i.hi - 1.0 / 3.0).abs() < 1e-8 && i.hi_closed, "{i:?}");
    }

    #[test]
    fn sec4_direct_checks() {
        let model = ClaimModel::Density(DensityClaimModel::sec4());
        let u = UtilityFn::sqrt();
        assert!(marginal_check_direct(&model, &u, &Endowment::scalar(1.0, 1.0), &[-0.5], &tol()).unwrap().passes);
        assert!(!marginal_check_direct(&model, &u, &Endowment::scalar(1.0, 0.0), &[0.0], &tol()).unwrap().passes);
        let at_minus_one = marginal_check_direct(&model, &u, &Endowment::scalar(1.0, 1.0), &[-1.0], &tol()).unwrap();
        assert!(!at_minus_one.passes && at_minus_one.arbitrage);
    }

    #[test]
    fn section_maximizers() {
        let u = UtilityFn::log();
        let (e, _) = section_maximizer(&two_state(), &u, &[0.3], 1.0, &tol()).unwrap();
        // marginal price -q/x = 0.3 with x + 0.3 q = 1
        assert!((-e.q[0] / e.x - 0.3).abs() < 1e-10, "{e:?}");
        let model = ClaimModel::Density(DensityClaimModel::sec4());
        let (e, _) = section_maximizer(&model, &UtilityFn::sqrt(), &[-0.5], 0.5, &tol()).unwrap();
        assert!((e.x - 1.0).abs() < 1e-6 && (e.q[0] - 1.0).abs() < 1e-6, "{e:?}");
    }
}
