//! Verifiers for the structural results relating marginal and arbitrage-free prices.

use rand::Rng;
use serde_json::json;

use crate::arbitrage::{martingale_vertices, max_min_martingale, Interval, PriceSet};
use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::marginal::{marginal_check_direct, marginal_set_formula, section_maximizer, subdifferential};
use crate::market::Endowment;
use crate::model::ClaimModel;
use crate::optimize::usc_probe;
use crate::random::rng;
use crate::report::{num, nums, Report};
use crate::utility::UtilityFn;

/// Sample sizes for the price-coincidence verifier.
#[derive(Debug, Clone, Copy)]
pub struct Thm1Plan {
    /// Arbitrage-free prices tested through their section maximizer.
    pub inside: usize,
    /// Prices outside the closed arbitrage-free set.
    pub outside: usize,
    /// Random endowments tried for each outside price.
    pub endowments: usize,
}

impl Thm1Plan {
    pub fn symmetric(samples: usize) -> Self {
        Self {
            inside: samples,
            outside: samples,
            endowments: 1,
        }
    }
}

/// Arbitrage-free prices equal the union of marginal prices.
///
/// Inclusion one way: the maximizer of `u` on the section `K̄^p(1)` has `p` as
/// a marginal price. The other way: a price outside the closed
/// arbitrage-free set is marginal at no sampled endowment.
pub fn verify_thm1(model: &ClaimModel, u: &UtilityFn, plan: Thm1Plan, seed: u64, tol: &Tolerances) -> Result<Report> {
    let mut report = Report::new("marginal-prices-equal-arbitrage-free-prices", Some(seed), plan.inside);
    let mut r = rng(seed);
    let afp = model.afp_set(tol)?;
    report.detail("afp_set", json!(afp.to_string()));
    let n = model.n();

    for i in 0..plan.inside {
        let p = sample_inside(model, &afp, &mut r, tol)?;
        let (e_star, _) = section_maximizer(model, u, &p, 1.0, tol)?;
        let d = marginal_check_direct(model, u, &e_star, &p, tol)?;
        report.record(
            "section_maximizer_is_marginal",
            json!({ "sample": i, "p": nums(&p), "endowment": nums(&e_star.to_vec()) }),
            "gain <= marginal tolerance",
            format!("gain {:.3e}", d.gain),
            tol.marginal - d.gain,
            d.passes,
        );
    }

    for i in 0..plan.outside {
        let p = sample_outside(model, &afp, &mut r)?;
        for k in 0..plan.endowments {
            let e = random_interior_endowment(model, u, &mut r, tol)?;
            let d = marginal_check_direct(model, u, &e, &p, tol)?;
            report.record(
                "outside_price_not_marginal",
                json!({ "sample": i, "endowment_index": k, "p": nums(&p), "endowment": nums(&e.to_vec()) }),
                "agent trades",
                if d.arbitrage { "arbitrage ray".to_string() } else { format!("gain {:.3e}", d.gain) },
                d.gain - tol.marginal,
                !d.passes,
            );
        }
    }
    report.detail("claims", json!(n));
    Ok(report)
}

fn sample_inside(model: &ClaimModel, afp: &PriceSet, r: &mut impl Rng, tol: &Tolerances) -> Result<Vec<f64>> {
    if let PriceSet::Interval(i) = afp {
        let w = i.width();
        return Ok(vec![i.lo + w * r.random_range(0.02..0.98)]);
    }
    // several claims: price under a random mixture of a strictly positive
    // martingale measure and polytope vertices
    let mkt = model.cone_market();
    let centre = max_min_martingale(&mkt, None)?
        .filter(|w| w.min_mass > tol.strict_positivity)
        .ok_or(Error::NoMartingaleMeasure)?
        .q_measure;
    let verts = martingale_vertices(&mkt);
    let mut q = centre.clone();
    if !verts.is_empty() {
        let v = &verts[r.random_range(0..verts.len())];
        let t = r.random_range(0.0..0.9);
        for (qi, vi) in q.iter_mut().zip(v) {
            *qi = (1.0 - t) * *qi + t * vi;
        }
    }
    Ok((0..mkt.n())
        .map(|j| (0..mkt.m()).map(|w| q[w] * mkt.claim_payoffs[w][j]).sum())
        .collect())
}

fn sample_outside(model: &ClaimModel, afp: &PriceSet, r: &mut impl Rng) -> Result<Vec<f64>> {
    if let PriceSet::Interval(i) = afp {
        let w = i.width();
        let off = w * r.random_range(0.01..0.5);
        return Ok(vec![if r.random_bool(0.5) { i.hi + off } else { i.lo - off }]);
    }
    let mkt = model.cone_market();
    let j_out = r.random_range(0..mkt.n());
    Ok((0..mkt.n())
        .map(|j| {
            let col = mkt.claim(j);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            if j == j_out {
                hi + (hi - lo) * r.random_range(0.01..0.5)
            } else {
                lo + (hi - lo) * r.random_range(0.0..1.0)
            }
        })
        .collect())
}

/// An endowment with cash 1 and claims drawn inside the admissible range.
pub fn random_interior_endowment(model: &ClaimModel, u: &UtilityFn, r: &mut impl Rng, tol: &Tolerances) -> Result<Endowment> {
    let n = model.n();
    for _ in 0..100 {
        let mut e = Endowment::new(1.0, vec![0.0; n]);
        for j in 0..n {
            let mut dir = vec![0.0; n + 1];
            dir[1 + j] = 1.0;
            let (lo, hi) = model
                .line_range(&e, &dir)?
                .ok_or_else(|| Error::Precondition("cash endowment outside K̄".into()))?;
            let (lo, hi) = (lo.max(-10.0), hi.min(10.0));
            e.q[j] = lo + (hi - lo) * r.random_range(0.1..0.9);
        }
        if model.u(u, &e, tol)?.is_finite() && !model.value(u, &e, tol)?.boundary {
            return Ok(e);
        }
    }
    Err(Error::Numerical("could not sample an interior endowment".into()))
}

/// Marginal prices at a boundary endowment form a segment whose far end is
/// an arbitrage price.
pub fn verify_thm2(model: &ClaimModel, u: &UtilityFn, e: &Endowment, p0: Option<f64>, tol: &Tolerances) -> Result<Report> {
    if model.n() != 1 {
        return Err(Error::Precondition("segment verifier handles one claim".into()));
    }
    if e.norm1() == 0.0 {
        return Err(Error::Precondition("endowment must be nonzero".into()));
    }
    let set = marginal_set_formula(model, u, e, tol)?;
    if set.is_empty() {
        return Err(Error::Precondition(format!("marginal price set at {e:?} is empty")));
    }
    let interval = set.interval().expect("one claim gives an interval");
    let limit = set
        .limit_prices
        .iter()
        .map(|p| p[0])
        .find(|p| p.is_finite())
        .ok_or_else(|| Error::Precondition("no recession direction: endowment is not on the boundary".into()))?;
    let start = p0.unwrap_or(set.base_prices[0][0]);
    let mut report = Report::new("boundary-marginal-segment-reaches-arbitrage", None, 20);
    report.detail("marginal_set", json!(interval.to_string()));
    report.detail("endpoint", num(limit));
    report.detail("endowment", nums(&e.to_vec()));

    report.record(
        "start_in_marginal_set",
        json!({ "p0": num(start) }),
        "p0 in marginal set",
        interval.to_string(),
        0.0,
        interval.contains(start),
    );
    let free = model.is_arbitrage_free(&[limit], tol)?.is_free();
    report.record(
        "endpoint_is_arbitrage",
        json!({ "p": num(limit) }),
        "not arbitrage-free",
        if free { "arbitrage-free" } else { "not arbitrage-free" },
        0.0,
        !free,
    );
    for k in 0..20 {
        let p = start + (limit - start) * k as f64 / 20.0;
        let d = marginal_check_direct(model, u, e, &[p], tol)?;
        report.record(
            "segment_marginal",
            json!({ "p": num(p) }),
            "direct check passes",
            format!("gain {:.3e}", d.gain),
            tol.marginal - d.gain,
            d.passes,
        );
    }
    let d = marginal_check_direct(model, u, e, &[limit], tol)?;
    report.record(
        "endpoint_not_marginal",
        json!({ "p": num(limit) }),
        "direct check fails",
        if d.passes { "passes" } else { "fails" },
        0.0,
        !d.passes,
    );
    Ok(report)
}

/// Classification of one endowment for the uniqueness dichotomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointClass {
    InteriorSingleton,
    InteriorNonSingleton,
    BoundaryEmpty,
    BoundaryNonSingleton,
    BoundarySingleton,
    /// On the boundary with `u = -inf`: outside the domain of `u`.
    BoundaryInfinite,
    Excluded,
}

impl PointClass {
    pub fn label(&self) -> &'static str {
        match self {
            PointClass::InteriorSingleton => "interior_singleton",
            PointClass::InteriorNonSingleton => "interior_non_singleton",
            PointClass::BoundaryEmpty => "boundary_empty",
            PointClass::BoundaryNonSingleton => "boundary_non_singleton",
            PointClass::BoundarySingleton => "boundary_singleton",
            PointClass::BoundaryInfinite => "boundary_infinite",
            PointClass::Excluded => "excluded",
        }
    }
}

pub fn classify(model: &ClaimModel, u: &UtilityFn, e: &Endowment, tol: &Tolerances) -> Result<PointClass> {
    if e.norm1() == 0.0 {
        return Ok(PointClass::Excluded);
    }
    let v = model.value(u, e, tol)?;
    if !v.is_finite() {
        return Ok(if v.boundary { PointClass::BoundaryInfinite } else { PointClass::Excluded });
    }
    let sub = subdifferential(model, u, e, tol)?;
    let singleton = sub.is_singleton();
    Ok(match (v.boundary, sub.empty, singleton) {
        (false, _, true) => PointClass::InteriorSingleton,
        (false, _, false) => PointClass::InteriorNonSingleton,
        (true, true, _) => PointClass::BoundaryEmpty,
        (true, false, true) => PointClass::BoundarySingleton,
        (true, false, false) => PointClass::BoundaryNonSingleton,
    })
}

/// Endowments `(x, q)` for each `x`, with `q` spanning the admissible range
/// including both edges.
pub fn endowment_grid(model: &ClaimModel, xs: &[f64], per_x: usize) -> Result<Vec<Endowment>> {
    if model.n() != 1 {
        return Err(Error::Precondition("grid helper handles one claim".into()));
    }
    let mut out = Vec::new();
    for &x in xs {
        let e = Endowment::scalar(x, 0.0);
        let Some((lo, hi)) = model.line_range(&e, &[0.0, 1.0])? else {
            continue;
        };
        let (lo, hi) = (lo.max(-10.0 * x.abs()), hi.min(10.0 * x.abs()));
        for k in 0..per_x.max(2) {
            let q = lo + (hi - lo) * k as f64 / (per_x.max(2) - 1) as f64;
            out.push(Endowment::scalar(x, q));
        }
    }
    Ok(out)
}

/// No boundary endowment has a unique marginal price.
pub fn verify_uniqueness_dichotomy(model: &ClaimModel, u: &UtilityFn, grid: &[Endowment], tol: &Tolerances) -> Result<Report> {
    let mut report = Report::new("boundary-marginal-prices-never-unique", None, grid.len());
    let mut counts = serde_json::Map::new();
    for e in grid {
        let class = classify(model, u, e, tol)?;
        let entry = counts.entry(class.label()).or_insert(json!(0));
        *entry = json!(entry.as_u64().unwrap_or(0) + 1);
        if class == PointClass::Excluded {
            continue;
        }
        report.record(
            "dichotomy",
            json!({ "endowment": nums(&e.to_vec()) }),
            "not a boundary singleton",
            class.label(),
            0.0,
            class != PointClass::BoundarySingleton,
        );
    }
    report.detail("classes", serde_json::Value::Object(counts));
    Ok(report)
}

/// Upper semicontinuity along rays into `e`.
pub fn verify_usc(
    model: &ClaimModel,
    u: &UtilityFn,
    e: &Endowment,
    directions: &[Vec<f64>],
    steps: &[f64],
    tol: &Tolerances,
) -> Result<Report> {
    let probe = usc_probe(|z| model.u(u, z, tol), e, directions, steps, 1e-6)?;
    let mut report = Report::new("value-function-upper-semicontinuous", None, steps.len());
    report.detail("base_value", num(probe.base_value));
    for ray in &probe.directions {
        report.record(
            "limsup_below_value",
            json!({ "direction": nums(&ray.direction), "values": nums(&ray.values) }),
            format!("limsup <= {}", crate::report::fmt_float(probe.base_value)),
            crate::report::fmt_float(ray.limsup),
            if probe.base_value.is_finite() && ray.limsup.is_finite() {
                probe.base_value + 1e-6 - ray.limsup
            } else {
                0.0
            },
            !ray.violated,
        );
    }
    Ok(report)
}

/// The marginal set contains every point of `[lo, hi]` on a grid (one claim).
pub fn interval_contains_grid(set: &Interval, lo: f64, hi: f64, count: usize) -> bool {
    (0..count).all(|k| set.contains(lo + (hi - lo) * k as f64 / (count.max(2) - 1) as f64))
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

    #[test]
    fn thm1_two_state_log() {
        let r = verify_thm1(&two_state(), &UtilityFn::log(), Thm1Plan::symmetric(20), 7, &Tolerances::default()).unwrap();
        assert_eq!(r.total(), 40);
        assert!(r.all_passed(), "{:?}", r.failures);
    }

    #[test]
    fn thm1_sec4() {
        let model = ClaimModel::Density(DensityClaimModel::sec4());
        let r = verify_thm1(&model, &UtilityFn::sqrt(), Thm1Plan::symmetric(5), 1, &Tolerances::default()).unwrap();
        assert!(r.all_passed(), "{:?}", r.failures);
    }

    #[test]
    fn thm2_sec4_and_empty_case() {
        let model = ClaimModel::Density(DensityClaimModel::sec4());
        let tol = Tolerances::default();
        for x in [1.0, 2.0] {
            let r = verify_thm2(&model, &UtilityFn::sqrt(), &Endowment::scalar(x, x), Some(0.0), &tol).unwrap();
            assert!(r.all_passed(), "{:?}", r.failures);
        }
        let err = verify_thm2(&two_state(), &UtilityFn::sqrt(), &Endowment::scalar(1.0, 1.0), None, &tol).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn dichotomy_grids() {
        let tol = Tolerances::default();
        let m = two_state();
        let grid = endowment_grid(&m, &[0.5, 1.0, 2.0], 7).unwrap();
        let r = verify_uniqueness_dichotomy(&m, &UtilityFn::log(), &grid, &tol).unwrap();
        assert!(r.all_passed());
        let classes = r.details["classes"].as_object().unwrap();
        assert_eq!(classes["boundary_infinite"], json!(6));
        assert_eq!(classes["interior_singleton"], json!(15));

        let s = ClaimModel::Density(DensityClaimModel::sec4());
        let grid = endowment_grid(&s, &[1.0], 5).unwrap();
        let r = verify_uniqueness_dichotomy(&s, &UtilityFn::sqrt(), &grid, &tol).unwrap();
        assert!(r.all_passed());
        let classes = r.details["classes"].as_object().unwrap();
        assert_eq!(classes["boundary_non_singleton"], json!(2));
    }

    #[test]
    fn usc_sec4_corner() {
        let s = ClaimModel::Density(DensityClaimModel::sec4());
        let r = verify_usc(
            &s,
            &UtilityFn::sqrt(),
            &Endowment::scalar(1.0, 1.0),
            &[vec![0.0, -1.0], vec![1.0, 0.0]],
            &[1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            &Tolerances::default(),
        )
        .unwrap();
        assert!(r.all_passed(), "{:?}", r.checks);
    }
}
