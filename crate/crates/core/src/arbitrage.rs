//! Arbitrage-free prices: martingale-measure LPs, certificates and price sets.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cone::{build_kbar, polar_cone, section_recession_cone, PolyCone};
use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::lp::{Cmp, LinearProgram, LpOutcome};
use crate::market::FiniteMarket;

/// A strictly positive state-price vector with `Σq = 1`, `q·Δ = 0` (and `q·F = p`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleWitness {
    pub q_measure: Vec<f64>,
    pub min_mass: f64,
}

/// Evidence that a price admits arbitrage: a nonzero `(x, q)` in `K̄ ∩ (1,p)^⊥`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrageCertificate {
    /// Normalized to max-norm 1; `None` only if the search found nothing.
    pub z: Option<Vec<f64>>,
    /// Best attainable minimum state-price mass (`-inf` when no measure prices the claims at `p`).
    pub min_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum ArbitrageVerdict {
    Free(MartingaleWitness),
    Arbitrage(ArbitrageCertificate),
}

impl ArbitrageVerdict {
    pub fn is_free(&self) -> bool {
        matches!(self, ArbitrageVerdict::Free(_))
    }

    pub fn min_mass(&self) -> f64 {
        match self {
            ArbitrageVerdict::Free(w) => w.min_mass,
            ArbitrageVerdict::Arbitrage(c) => c.min_mass,
        }
    }

    pub fn certificate(&self) -> Option<&[f64]> {
        match self {
            ArbitrageVerdict::Arbitrage(c) => c.z.as_deref(),
            ArbitrageVerdict::Free(_) => None,
        }
    }
}

/// Interval with endpoint flags. Empty when `lo > hi`, or `lo == hi` with an open end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn open(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            lo_closed: false,
            hi_closed: false,
        }
    }

    pub fn empty() -> Self {
        Self::open(f64::NAN, f64::NAN)
    }

    pub fn is_empty(&self) -> bool {
        !(self.lo <= self.hi) || (self.lo == self.hi && !(self.lo_closed && self.hi_closed))
    }

    pub fn is_singleton(&self) -> bool {
        self.lo == self.hi && self.lo_closed && self.hi_closed
    }

    pub fn contains(&self, p: f64) -> bool {
        if self.is_empty() {
            return false;
        }
        let above = if self.lo_closed { p >= self.lo } else { p > self.lo };
        let below = if self.hi_closed { p <= self.hi } else { p < self.hi };
        above && below
    }

    pub fn width(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.hi - self.lo
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "empty");
        }
        let l = if self.lo_closed { '[' } else { '(' };
        let r = if self.hi_closed { ']' } else { ')' };
        write!(f, "{l}{}, {}{r}", self.lo, self.hi)?;
        if !self.lo_closed && !self.hi_closed {
            write!(f, " open")?;
        } else if self.lo_closed && self.hi_closed {
            write!(f, " closed")?;
        }
        Ok(())
    }
}

/// Arbitrage-free (or marginal) price set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum PriceSet {
    /// One claim.
    Interval(Interval),
    /// Several claims: `{p : A p ≤ b}`, with `strict[i]` marking `<`.
    Polytope {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        strict: Vec<bool>,
    },
}

impl PriceSet {
    pub fn interval(&self) -> Option<Interval> {
        match self {
            PriceSet::Interval(i) => Some(*i),
            PriceSet::Polytope { .. } => None,
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        match self {
            PriceSet::Interval(i) => i.contains(p[0]),
            PriceSet::Polytope { a, b, strict } => a.iter().zip(b).zip(strict).all(|((row, bi), s)| {
                let v: f64 = row.iter().zip(p).map(|(x, y)| x * y).sum();
                if *s {
                    v < *bi
                } else {
                    v <= *bi
                }
            }),
        }
    }
}

impl fmt::Display for PriceSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PriceSet::Interval(i) => write!(f, "{i}"),
            PriceSet::Polytope { a, b, strict } => {
                for ((row, bi), s) in a.iter().zip(b).zip(strict) {
                    let op = if *s { "<" } else { "<=" };
                    writeln!(f, "{row:?} . p {op} {bi}")?;
                }
                Ok(())
            }
        }
    }
}

/// Solve `max δ` s.t. `q ≥ δ`, `Σq = 1`, `q·Δ = 0` and, if given, `q·F = p`.
/// `None` when the constraints are infeasible.
pub fn max_min_martingale(mkt: &FiniteMarket, prices: Option<&[f64]>) -> Result<Option<MartingaleWitness>> {
    let m = mkt.m();
    let mut obj = vec![0.0; m + 1];
    obj[m] = 1.0;
    let mut lp = LinearProgram::maximize(obj);
    for w in 0..m {
        lp.nonnegative(w);
        lp.add_sparse(&[(w, 1.0), (m, -1.0)], Cmp::Ge, 0.0);
    }
    lp.bounds(m, None, Some(1.0));
    lp.add_sparse(&(0..m).map(|w| (w, 1.0)).collect::<Vec<_>>(), Cmp::Eq, 1.0);
    for i in 0..mkt.d() {
        let terms: Vec<_> = (0..m).map(|w| (w, mkt.stock_increments[w][i])).collect();
        lp.add_sparse(&terms, Cmp::Eq, 0.0);
    }
    if let Some(p) = prices {
        for (j, &pj) in p.iter().enumerate() {
            let terms: Vec<_> = (0..m).map(|w| (w, mkt.claim_payoffs[w][j])).collect();
            lp.add_sparse(&terms, Cmp::Eq, pj);
        }
    }
    match lp.solve()? {
        LpOutcome::Optimal(s) => {
            let q: Vec<f64> = s.x[..m].to_vec();
            let min_mass = q.iter().cloned().fold(f64::INFINITY, f64::min);
            Ok(Some(MartingaleWitness { q_measure: q, min_mass }))
        }
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => Err(Error::Solver("martingale LP unbounded".into())),
    }
}

/// A nonzero `(x, q) ∈ K̄` with `x + q·p = 0`, found by maximizing total
/// terminal wealth (capped at 1 per state).
pub fn arbitrage_certificate(mkt: &FiniteMarket, prices: &[f64], tol: f64) -> Result<Option<Vec<f64>>> {
    let (m, n, d) = (mkt.m(), mkt.n(), mkt.d());
    // Variables: x, q (n), H (d), all free.
    let nv = 1 + n + d;
    let mut obj = vec![0.0; nv];
    for w in 0..m {
        obj[0] += 1.0;
        for j in 0..n {
            obj[1 + j] += mkt.claim_payoffs[w][j];
        }
        for i in 0..d {
            obj[1 + n + i] += mkt.stock_increments[w][i];
        }
    }
    let mut lp = LinearProgram::maximize(obj);
    for w in 0..m {
        let mut row = vec![1.0];
        row.extend_from_slice(&mkt.claim_payoffs[w]);
        row.extend_from_slice(&mkt.stock_increments[w]);
        lp.add(row.clone(), Cmp::Ge, 0.0);
        lp.add(row, Cmp::Le, 1.0);
    }
    let mut budget = vec![0.0; nv];
    budget[0] = 1.0;
    budget[1..=n].copy_from_slice(prices);
    lp.add(budget, Cmp::Eq, 0.0);
    match lp.solve()? {
        LpOutcome::Optimal(s) if s.objective > tol => {
            let z = &s.x[..=n];
            let scale = z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if scale <= tol {
                return Ok(None);
            }
            Ok(Some(z.iter().map(|v| v / scale).collect()))
        }
        LpOutcome::Unbounded => Err(Error::Solver("certificate LP unbounded".into())),
        _ => Ok(None),
    }
}

/// Decide whether `p` is arbitrage-free: `(1, p)` lies in the interior of the
/// polar cone iff an equivalent martingale measure prices the claims at `p`.
pub fn is_arbitrage_free(mkt: &FiniteMarket, prices: &[f64], tol: &Tolerances) -> Result<ArbitrageVerdict> {
    if prices.len() != mkt.n() {
        return Err(Error::Dimension(format!(
            "{} prices for {} claims",
            prices.len(),
            mkt.n()
        )));
    }
    let witness = max_min_martingale(mkt, Some(prices))?;
    match witness {
        Some(w) if w.min_mass > tol.strict_positivity => Ok(ArbitrageVerdict::Free(w)),
        other => {
            let min_mass = other.map_or(f64::NEG_INFINITY, |w| w.min_mass);
            let z = arbitrage_certificate(mkt, prices, tol.feasibility)?;
            Ok(ArbitrageVerdict::Arbitrage(ArbitrageCertificate { z, min_mass }))
        }
    }
}

/// True iff `f_j` is attainable as cash plus a stock position.
pub fn is_replicable(mkt: &FiniteMarket, j: usize) -> bool {
    let m = mkt.m();
    let d = mkt.d();
    let basis = DMatrix::from_fn(m, d + 1, |w, c| if c == 0 { 1.0 } else { mkt.stock_increments[w][c - 1] });
    let target = DVector::from_vec(mkt.claim(j));
    let svd = basis.clone().svd(true, true);
    let coef = match svd.solve(&target, 1e-12) {
        Ok(c) => c,
        Err(_) => return false,
    };
    let resid = &basis * coef - &target;
    resid.amax() <= 1e-9 * mkt.scale()
}

/// Endpoints of `{E_Q[f_j] : Q in the closed martingale polytope}`.
pub fn price_range(mkt: &FiniteMarket, j: usize) -> Result<(f64, f64)> {
    let m = mkt.m();
    let payoff = mkt.claim(j);
    let mut out = [0.0; 2];
    for (k, maximize) in [false, true].into_iter().enumerate() {
        let mut lp = if maximize {
            LinearProgram::maximize(payoff.clone())
        } else {
            LinearProgram::minimize(payoff.clone())
        };
        for w in 0..m {
            lp.nonnegative(w);
        }
        lp.add(vec![1.0; m], Cmp::Eq, 1.0);
        for i in 0..mkt.d() {
            lp.add((0..m).map(|w| mkt.stock_increments[w][i]).collect(), Cmp::Eq, 0.0);
        }
        match lp.solve()? {
            LpOutcome::Optimal(s) => out[k] = s.objective,
            LpOutcome::Infeasible => return Err(Error::NoMartingaleMeasure),
            LpOutcome::Unbounded => return Err(Error::Solver("price-range LP unbounded".into())),
        }
    }
    Ok((out[0], out[1]))
}

/// Check the standing assumptions: an equivalent martingale measure exists
/// and no claim is replicable.
pub fn check_standing_assumptions(mkt: &FiniteMarket, tol: &Tolerances) -> Result<MartingaleWitness> {
    let witness = max_min_martingale(mkt, None)?;
    let witness = match witness {
        Some(w) if w.min_mass > tol.strict_positivity => w,
        _ => return Err(Error::NoMartingaleMeasure),
    };
    if let Some(j) = (0..mkt.n()).find(|&j| is_replicable(mkt, j)) {
        return Err(Error::ReplicableClaim(j));
    }
    Ok(witness)
}

/// The set of arbitrage-free prices.
///
/// One claim gives an open interval from two LPs over the martingale
/// polytope. Several claims give the H-form `{p : (1,p) ∈ int L̄}` read off
/// the polar of the endowment cone.
pub fn afp_set(mkt: &FiniteMarket, tol: &Tolerances) -> Result<PriceSet> {
    check_standing_assumptions(mkt, tol)?;
    if mkt.n() == 1 {
        let (lo, hi) = price_range(mkt, 0)?;
        for end in [lo, hi] {
            if is_arbitrage_free(mkt, &[end], tol)?.is_free() {
                return Err(Error::Numerical(format!(
                    "endpoint {end} of the price range carries a strictly positive measure"
                )));
            }
        }
        return Ok(PriceSet::Interval(Interval::open(lo, hi)));
    }
    let polar = polar_cone(&build_kbar(mkt)?).normalized();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for row in &polar.halfspaces {
        a.push(row[1..].iter().map(|v| -v).collect());
        b.push(row[0]);
    }
    let strict = vec![true; b.len()];
    Ok(PriceSet::Polytope { a, b, strict })
}

/// `(1, p)` strictly inside the polar cone (given in H-form).
pub fn decide_by_polar(polar: &PolyCone, prices: &[f64], tol: f64) -> Result<bool> {
    let mut v = vec![1.0];
    v.extend_from_slice(prices);
    Ok(polar.margin(&v)? > tol)
}

/// `K̄ ∩ (1,p)^⊥ = {0}`.
pub fn decide_by_recession(kbar: &PolyCone, prices: &[f64], tol: f64) -> Result<bool> {
    section_recession_cone(kbar, prices).is_trivial(tol)
}

/// Vertices of the closed martingale polytope `{q ≥ 0, Σq = 1, q·Δ = 0}`.
pub fn martingale_vertices(mkt: &FiniteMarket) -> Vec<Vec<f64>> {
    let m = mkt.m();
    let d = mkt.d();
    // Independent equality rows of [1; Δ^T].
    let full = DMatrix::from_fn(d + 1, m, |r, w| if r == 0 { 1.0 } else { mkt.stock_increments[w][r - 1] });
    let mut rows: Vec<usize> = Vec::new();
    for r in 0..=d {
        let mut trial = rows.clone();
        trial.push(r);
        let sub = full.select_rows(&trial);
        if sub.rank(1e-10) == trial.len() {
            rows = trial;
        }
    }
    let a = full.select_rows(&rows);
    let k = rows.len();
    let mut rhs = DVector::zeros(k);
    rhs[0] = 1.0;
    let mut out: Vec<Vec<f64>> = Vec::new();
    for cols in combinations(m, k) {
        let sub = a.select_columns(&cols);
        let lu = sub.lu();
        if lu.determinant().abs() < 1e-12 {
            continue;
        }
        let Some(sol) = lu.solve(&rhs) else { continue };
        if sol.iter().any(|&v| v < -1e-12) {
            continue;
        }
        let mut q = vec![0.0; m];
        for (c, &w) in cols.iter().enumerate() {
            q[w] = sol[c].max(0.0);
        }
        if !out.iter().any(|o| o.iter().zip(&q).all(|(a, b)| (a - b).abs() < 1e-10)) {
            out.push(q);
        }
    }
    out
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::DensityClaimModel;

    fn two_state() -> FiniteMarket {
        FiniteMarket::from_matrices(vec![0.5, 0.5], vec![vec![], vec![]], vec![vec![1.0], vec![-1.0]]).unwrap()
    }

    #[test]
    fn two_state_witness_at_half() {
        let v = is_arbitrage_free(&two_state(), &[0.5], &Tolerances::default()).unwrap();
        match v {
            ArbitrageVerdict::Free(w) => {
                assert!((w.q_measure[0] - 0.75).abs() < 1e-12);
                assert!((w.q_measure[1] - 0.25).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sec4_prices() {
        let mkt = DensityClaimModel::sec4().support_market();
        let tol = Tolerances::default();
        assert!(is_arbitrage_free(&mkt, &[0.0], &tol).unwrap().is_free());
        let v = is_arbitrage_free(&mkt, &[-1.0], &tol).unwrap();
        let z = v.certificate().unwrap();
        assert!((z[0] - 1.0).abs() < 1e-12 && (z[1] - 1.0).abs() < 1e-12, "{z:?}");
        assert_eq!(afp_set(&mkt, &tol).unwrap(), PriceSet::Interval(Interval::open(-1.0, 1.0)));
    }

    #[test]
    fn outside_closure_has_no_measure_at_all() {
        let v = is_arbitrage_free(&two_state(), &[1.5], &Tolerances::default()).unwrap();
        assert_eq!(v.min_mass(), f64::NEG_INFINITY);
        assert!(v.certificate().is_some());
    }

    #[test]
    fn replicability() {
        assert!(!is_replicable(&two_state(), 0));
        let hedged = FiniteMarket::from_matrices(vec![0.5, 0.5], vec![vec![1.0], vec![-1.0]], vec![vec![1.0], vec![-1.0]]).unwrap();
        assert!(is_replicable(&hedged, 0));
        let constant = FiniteMarket::from_matrices(vec![0.5, 0.5], vec![vec![], vec![]], vec![vec![1.0], vec![1.0]]).unwrap();
        assert!(is_replicable(&constant, 0));
        assert!(matches!(afp_set(&hedged, &Tolerances::default()), Err(Error::ReplicableClaim(0))));
    }

    #[test]
    fn arbitrage_market_rejected() {
        let mkt = FiniteMarket::from_matrices(vec![0.5, 0.5], vec![vec![1.0], vec![0.5]], vec![vec![1.0], vec![-1.0]]).unwrap();
        assert!(matches!(afp_set(&mkt, &Tolerances::default()), Err(Error::NoMartingaleMeasure)));
    }

    #[test]
    fn two_claims_polytope() {
        // Three states, no stocks, claims e1 - e3 and e2 - e3 style payoffs.
        let mkt = FiniteMarket::from_matrices(
            vec![0.3, 0.3, 0.4],
            vec![vec![], vec![], vec![]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]],
        )
        .unwrap();
        let set = afp_set(&mkt, &Tolerances::default()).unwrap();
        // Prices are (q1, q2) with q1, q2 > 0 and q1 + q2 < 1.
        assert!(set.contains(&[0.2, 0.3]));
        assert!(!set.contains(&[0.0, 0.3]));
        assert!(!set.contains(&[0.6, 0.4]));
        assert!(!set.contains(&[-0.1, 0.3]));
    }

    #[test]
    fn vertices_of_simplex_and_martingale_segment() {
        let v = martingale_vertices(&two_state());
        assert_eq!(v.len(), 2);
        let mkt = FiniteMarket::from_matrices(
            vec![0.3, 0.3, 0.4],
            vec![vec![1.0], vec![0.0], vec![-1.0]],
            vec![vec![1.0], vec![0.0], vec![0.0]],
        )
        .unwrap();
        let v = martingale_vertices(&mkt);
        // q1 = q3, q2 = 1 - 2 q1: vertices (0,1,0) and (1/2,0,1/2).
        assert_eq!(v.len(), 2);
        assert!(v.iter().any(|q| (q[1] - 1.0).abs() < 1e-12));
        assert!(v.iter().any(|q| (q[0] - 0.5).abs() < 1e-12 && (q[2] - 0.5).abs() < 1e-12));
    }

    #[test]
    fn interval_display_and_membership() {
        let i = Interval::open(-1.0, 1.0);
        assert_eq!(i.to_string(), "(-1, 1) open");
        assert!(i.contains(0.0) && !i.contains(1.0));
        let h = Interval { lo: -1.0, hi: 0.5, lo_closed: false, hi_closed: true };
        assert_eq!(h.to_string(), "(-1, 0.5]");
        assert!(h.contains(0.5));
        assert!(Interval::empty().is_empty());
    }
}
