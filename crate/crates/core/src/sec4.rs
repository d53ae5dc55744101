//! The worked example: claim `s` with density `c(s+1)^{3/2}` on `[-1, 1]` and `U = √`.
//!
//! Every endowment `(x, x)` sits on the boundary of `K̄ = {|b| ≤ a}`, yet it
//! maximizes `u` on whole families of price sections, so its marginal prices
//! form an interval reaching the arbitrage price `-1`.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::arbitrage::{Interval, PriceSet};
use crate::config::Tolerances;
use crate::density::DensityClaimModel;
use crate::error::{Error, Result};
use crate::marginal::{marginal_check_direct, section_maximizer};
use crate::market::Endowment;
use crate::model::ClaimModel;
use crate::optimize::{density_expectation, golden_section_max, value_u_density};
use crate::report::{num, Report};
use crate::utility::UtilityFn;

/// Closed form of the normalizer, `5 / (8√2)`.
pub fn sec4_normalizer() -> f64 {
    5.0 / (8.0 * 2f64.sqrt())
}

/// Prices `-1 + 1e-3 < p ≤ 0`, evenly spaced, the last one `0`.
pub fn price_grid(count: usize) -> Vec<f64> {
    let lo = -1.0 + 1e-3;
    (1..=count).map(|k| lo + (0.0 - lo) * k as f64 / count as f64).collect()
}

#[derive(Debug, Clone)]
pub struct Sec4Instance {
    pub model: DensityClaimModel,
    pub utility: UtilityFn,
    pub x: f64,
}

impl Sec4Instance {
    pub fn new(x: f64) -> Result<Self> {
        Self::with_model(DensityClaimModel::sec4(), x)
    }

    pub fn with_model(model: DensityClaimModel, x: f64) -> Result<Self> {
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::Validation(format!("cash level must be positive, got {x}")));
        }
        Ok(Self {
            model,
            utility: UtilityFn::sqrt(),
            x,
        })
    }

    pub fn claim_model(&self) -> ClaimModel {
        ClaimModel::Density(self.model.clone())
    }

    /// `c`, as computed by the model.
    pub fn c(&self) -> f64 {
        self.model.normalizer
    }
}

/// `h(q) = u(x, q)` and `h'(q) = c ∫ U'(x + q s) s ρ(s) ds`.
pub fn h_and_hprime(inst: &Sec4Instance, q: f64) -> Result<(f64, f64)> {
    let x = inst.x;
    if q.abs() > x * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!("need |q| <= x, got q={q}, x={x}")));
    }
    let tol = Tolerances::default();
    let h = value_u_density(&inst.model, &inst.utility, &Endowment::scalar(x, q), &tol)?.value;
    let u = inst.utility;
    let hp = density_expectation(&inst.model, x, q, |w, s| u.derivative(w) * s, false)?;
    if !hp.is_finite() {
        return Err(Error::Numerical(format!("h'({q}) is not finite")));
    }
    Ok((h, hp))
}

/// Outcome of maximizing `u` over the section through `(x, x)` at price `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMaxCheck {
    pub p: f64,
    pub maximizer: Endowment,
    pub value: f64,
    /// `u(x, x)` minus the best value at interior grid points of the section.
    pub interior_gap: f64,
    pub distance: f64,
    pub passes: bool,
}

/// Maximize `u` over `K̄^p(x(1+p))` in the claim coordinate and compare with `(x, x)`.
pub fn boundary_maximizer_check(inst: &Sec4Instance, p: f64) -> Result<BoundaryMaxCheck> {
    let tol = Tolerances::default();
    let model = inst.claim_model();
    let x = inst.x;
    let budget = x * (1.0 + p);
    let start = Endowment::scalar(budget, 0.0);
    let dir = [-p, 1.0];
    let (lo, hi) = model
        .line_range(&start, &dir)?
        .ok_or_else(|| Error::Precondition("empty section".into()))?;
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Precondition(format!("section at p={p} is unbounded")));
    }
    let u = inst.utility;
    let eval = |t: f64| -> f64 {
        value_u_density(&inst.model, &u, &start.shifted(&dir, t), &tol)
            .map(|r| r.value)
            .unwrap_or(f64::NAN)
    };
    let (t, value) = golden_section_max(eval, lo, hi, 1e-13);
    if value.is_nan() {
        return Err(Error::Numerical(format!("section search failed at p={p}")));
    }
    let maximizer = start.shifted(&dir, t);
    let distance = (maximizer.x - x).abs().max((maximizer.q[0] - x).abs());
    let corner = eval(x);
    // interior grid strictly left of the corner q = x
    let interior_best = (0..100)
        .map(|k| lo + (x - lo) * k as f64 / 100.0)
        .map(eval)
        .fold(f64::NEG_INFINITY, f64::max);
    let interior_gap = corner - interior_best;
    Ok(BoundaryMaxCheck {
        p,
        maximizer,
        value,
        interior_gap,
        distance,
        passes: distance <= 1e-6 * x.max(1.0) && interior_gap > 1e-8,
    })
}

/// Relative error of `h'(x)` against `c / (3√x)`.
pub fn hprime_identity_error(inst: &Sec4Instance) -> Result<f64> {
    let (_, hp) = h_and_hprime(inst, inst.x)?;
    let expected = inst.c() / (3.0 * inst.x.sqrt());
    Ok((hp - expected).abs() / expected)
}

/// Plot data emitted alongside the report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Sec4Tables {
    /// `(q, h, h')`.
    pub h_rows: Vec<Vec<f64>>,
    /// `(p, maximizer_q)`.
    pub maximizer_rows: Vec<Vec<f64>>,
}

/// Every check of the worked example at cash level `x`.
pub fn reproduce_sec4(x: f64) -> Result<(Report, Sec4Tables)> {
    reproduce_with_model(DensityClaimModel::sec4(), x)
}

pub fn reproduce_with_model(density: DensityClaimModel, x: f64) -> Result<(Report, Sec4Tables)> {
    let inst = Sec4Instance::with_model(density, x)?;
    let tol = Tolerances::default();
    let model = inst.claim_model();
    let u = inst.utility;
    let mut report = Report::new("sec4-example", None, 20);
    let mut tables = Sec4Tables::default();

    let c_err = (inst.c() - sec4_normalizer()).abs();
    report.record(
        "normalizer",
        json!({}),
        format!("{:.10}", sec4_normalizer()),
        format!("{:.10}", inst.c()),
        1e-10 - c_err,
        c_err <= 1e-10,
    );

    let afp = model.afp_set(&tol)?;
    let open_unit = afp == PriceSet::Interval(Interval::open(-1.0, 1.0));
    report.record("afp_set", json!({}), "(-1, 1) open", afp.to_string(), 0.0, open_unit);
    for p in [-1.0, 1.0] {
        let free = model.is_arbitrage_free(&[p], &tol)?.is_free();
        report.record("afp_endpoint", json!({ "p": p }), "not arbitrage-free", verdict(free), 0.0, !free);
        let inside = p * (1.0 - 1e-6);
        let free = model.is_arbitrage_free(&[inside], &tol)?.is_free();
        report.record("afp_near_endpoint", json!({ "p": inside }), "arbitrage-free", verdict(free), 0.0, free);
    }

    for k in 0..=20 {
        let q = -x + 2.0 * x * k as f64 / 20.0;
        let (h, hp) = h_and_hprime(&inst, q)?;
        tables.h_rows.push(vec![q, h, hp]);
        report.record("hprime_positive", json!({ "q": num(q) }), "> 0", format!("{hp:.10e}"), hp, hp > 0.0);
    }

    let err = hprime_identity_error(&inst)?;
    report.record(
        "hprime_identity",
        json!({ "x": num(x) }),
        "c/(3 sqrt x) within 1e-6 relative",
        format!("relative error {err:.3e}"),
        1e-6 - err,
        err <= 1e-6,
    );

    let e = Endowment::scalar(x, x);
    for p in price_grid(20) {
        let b = boundary_maximizer_check(&inst, p)?;
        tables.maximizer_rows.push(vec![p, b.maximizer.q[0]]);
        report.record(
            "boundary_maximizer",
            json!({ "p": num(p), "x": num(x) }),
            "maximizer (x, x)",
            format!("({:.10}, {:.10})", b.maximizer.x, b.maximizer.q[0]),
            1e-6 * x.max(1.0) - b.distance,
            b.passes,
        );
        let d = marginal_check_direct(&model, &u, &e, &[p], &tol)?;
        report.record(
            "marginal_at_corner",
            json!({ "p": num(p), "x": num(x) }),
            "no gain from trading",
            format!("gain {:.3e}", d.gain),
            tol.marginal - d.gain,
            d.passes,
        );
    }

    let free = model.is_arbitrage_free(&[-1.0], &tol)?.is_free();
    report.record("minus_one_arbitrage", json!({ "p": -1.0 }), "not arbitrage-free", verdict(free), 0.0, !free);
    let d = marginal_check_direct(&model, &u, &e, &[-1.0], &tol)?;
    report.record("minus_one_not_marginal", json!({ "p": -1.0 }), "direct check fails", pass_word(d.passes), 0.0, !d.passes);

    for xs in [0.25, 1.0, 9.0] {
        let other = Sec4Instance::with_model(inst.model.clone(), xs)?;
        let ex = Endowment::scalar(xs, xs);
        for p in price_grid(5) {
            let d = marginal_check_direct(&other.claim_model(), &u, &ex, &[p], &tol)?;
            report.record(
                "inclusion_all_x",
                json!({ "p": num(p), "x": num(xs) }),
                "p marginal at (x, x)",
                format!("gain {:.3e}", d.gain),
                tol.marginal - d.gain,
                d.passes,
            );
        }
    }

    report.detail("x", num(x));
    report.detail("c", num(inst.c()));
    let (sx, _) = section_maximizer(&model, &u, &[0.0], x, &tol)?;
    report.detail("section_maximizer_p0", json!([num(sx.x), num(sx.q[0])]));
    Ok((report, tables))
}

fn verdict(free: bool) -> &'static str {
    if free {
        "arbitrage-free"
    } else {
        "not arbitrage-free"
    }
}

fn pass_word(pass: bool) -> &'static str {
    if pass {
        "direct check passes"
    } else {
        "direct check fails"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn h_values() {
        let inst = Sec4Instance::new(1.0).unwrap();
        let (h, hp) = h_and_hprime(&inst, 0.0).unwrap();
        assert!((h - 1.0).abs() < 1e-12);
        assert!(hp > 0.0);
        let (h, hp) = h_and_hprime(&inst, 1.0).unwrap();
        assert!((h - inst.c() * 8.0 / 3.0).abs() < 1e-10);
        assert!((hp - inst.c() / 3.0).abs() < 1e-9);
        assert!(h_and_hprime(&inst, 1.5).is_err());
    }

    #[test]
    fn grid_shape() {
        let g = price_grid(20);
        assert_eq!(g.len(), 20);
        assert_eq!(*g.last().unwrap(), 0.0);
        assert!(g[0] > -1.0 + 1e-3);
    }

    #[test]
    fn boundary_maximizer_examples() {
        let inst = Sec4Instance::new(1.0).unwrap();
        for p in [0.0, -0.5] {
            let b = boundary_maximizer_check(&inst, p).unwrap();
            assert!(b.passes, "{b:?}");
        }
        let b = boundary_maximizer_check(&inst, 0.9).unwrap();
        assert!(b.distance > 1e-3);
    }
}
