//! Maximal expected utility `u(x, q)`, its dual `w̃`, and small 1-D search helpers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arbitrage::{martingale_vertices, max_min_martingale};
use crate::config::Tolerances;
use crate::density::DensityClaimModel;
use crate::error::{Error, Result};
use crate::lp::{Cmp, LinearProgram, LpOutcome};
use crate::market::{dot, expected_utility, Endowment, FiniteMarket};
use crate::quadrature::SupportPoint;
use crate::utility::UtilityFn;

/// Fraction of the distance to the wealth boundary a Newton step may cover.
const STEP_TO_BOUNDARY: f64 = 0.99;
const NEWTON_ITERS: usize = 200;
const STRATEGY_BLOWUP: f64 = 1e12;

/// Outcome of a utility maximization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueResult {
    pub value: f64,
    pub optimal_strategy: Option<Vec<f64>>,
    pub optimal_wealth: Option<Vec<f64>>,
    /// `E[U'(Ŵ)]`, the derivative in cash; present at interior endowments.
    pub multiplier: Option<f64>,
    /// Endowment lies on the boundary of `K̄`.
    pub boundary: bool,
    /// States whose terminal wealth is zero under every admissible strategy.
    pub zero_states: Vec<usize>,
}

impl ValueResult {
    fn minus_infinity(boundary: bool) -> Self {
        Self {
            value: f64::NEG_INFINITY,
            optimal_strategy: None,
            optimal_wealth: None,
            multiplier: None,
            boundary,
            zero_states: Vec::new(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value > f64::NEG_INFINITY
    }
}

/// Strategies restricted to the affine set where the forced-zero states stay at zero,
/// parameterized as `H = h0 + N t`.
struct Reduced<'a> {
    u: &'a UtilityFn,
    probs: Vec<f64>,
    /// Wealth at `t = 0` for the states that can be positive.
    base: Vec<f64>,
    /// Rows `Δ[w] N` for those states.
    rows: Vec<Vec<f64>>,
    /// Contribution of the forced-zero states.
    constant: f64,
    h0: DVector<f64>,
    null: DMatrix<f64>,
}

impl Reduced<'_> {
    fn k(&self) -> usize {
        self.null.ncols()
    }

    fn wealth(&self, t: &[f64]) -> Vec<f64> {
        self.base.iter().zip(&self.rows).map(|(b, r)| b + dot(r, t)).collect()
    }

    fn objective(&self, t: &[f64]) -> f64 {
        let mut acc = self.constant;
        for (p, w) in self.probs.iter().zip(self.wealth(t)) {
            if w <= 0.0 {
                return f64::NEG_INFINITY;
            }
            acc += p * self.u.value(w);
        }
        acc
    }

    fn strategy(&self, t: &[f64]) -> Vec<f64> {
        let tv = DVector::from_column_slice(t);
        (&self.h0 + &self.null * tv).iter().cloned().collect()
    }

    /// Damped Newton ascent from `t0`, keeping all active wealth positive.
    fn solve_from(&self, t0: Vec<f64>, tol: &Tolerances) -> Result<Vec<f64>> {
        let k = self.k();
        let mut t = t0;
        if k == 0 {
            return Ok(t);
        }
        let mut f = self.objective(&t);
        if !f.is_finite() {
            return Err(Error::Solver("Newton start is not strictly feasible".into()));
        }
        for _ in 0..NEWTON_ITERS {
            let w = self.wealth(&t);
            let mut g = DVector::zeros(k);
            let mut hess = DMatrix::zeros(k, k);
            for ((p, wi), r) in self.probs.iter().zip(&w).zip(&self.rows) {
                let rv = DVector::from_column_slice(r);
                g.axpy(p * self.u.derivative(*wi), &rv, 1.0);
                hess.ger(-p * self.u.second_derivative(*wi), &rv, &rv, 1.0);
            }
            if g.amax() <= tol.optimality * 1e-4 {
                break;
            }
            let step = newton_direction(hess, &g);
            let decrement = g.dot(&step);
            if decrement <= 1e-22 * (1.0 + f.abs()) {
                break;
            }
            let dw: Vec<f64> = self.rows.iter().map(|r| dot(r, step.as_slice())).collect();
            let mut alpha: f64 = 1.0;
            for (wi, dwi) in w.iter().zip(&dw) {
                if *dwi < 0.0 {
                    alpha = alpha.min(STEP_TO_BOUNDARY * wi / -dwi);
                }
            }
            let mut accepted = false;
            for _ in 0..80 {
                let cand: Vec<f64> = t.iter().zip(step.iter()).map(|(a, b)| a + alpha * b).collect();
                let fc = self.objective(&cand);
                // near the optimum the Armijo test drowns in rounding
                let settled = decrement < 1e-10 * (1.0 + f.abs()) && fc.is_finite();
                if settled || fc >= f + 1e-4 * alpha * decrement {
                    t = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
            if t.iter().any(|v| v.abs() > STRATEGY_BLOWUP) {
                return Err(Error::Unbounded);
            }
        }
        Ok(t)
    }

    /// A random strictly feasible point on a random ray from `t0`.
    fn random_start(&self, t0: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let k = self.k();
        if k == 0 {
            return t0.to_vec();
        }
        let dir: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = self.wealth(t0);
        let mut reach = 10.0f64;
        for (wi, r) in w.iter().zip(&self.rows) {
            let dwi = dot(r, &dir);
            if dwi < 0.0 {
                reach = reach.min(wi / -dwi);
            }
        }
        let s = rng.random_range(0.05..0.9) * reach;
        t0.iter().zip(&dir).map(|(a, b)| a + s * b).collect()
    }
}

fn newton_direction(neg_hess: DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let k = g.len();
    let scale = neg_hess.diagonal().amax().max(1e-300);
    let mut reg = 0.0;
    for _ in 0..20 {
        let m = &neg_hess + DMatrix::identity(k, k) * reg;
        if let Some(ch) = m.cholesky() {
            return ch.solve(g);
        }
        reg = if reg == 0.0 { 1e-12 * scale } else { reg * 100.0 };
    }
    g.clone()
}

/// Orthonormal basis of `{h : a h = 0}` for `a` of shape `r × d`.
pub(crate) fn null_space(a: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return DMatrix::identity(d, d);
    }
    let gram = a.transpose() * a;
    let eig = gram.symmetric_eigen();
    let top = eig.eigenvalues.amax().max(1.0);
    let cols: Vec<usize> = (0..d).filter(|&i| eig.eigenvalues[i].abs() <= 1e-11 * top).collect();
    if cols.is_empty() {
        return DMatrix::zeros(d, 0);
    }
    eig.eigenvectors.select_columns(&cols)
}

/// Largest wealth (capped at 1) state `target` can reach while every state
/// keeps nonnegative wealth. Returns `(s, h)`.
fn max_state_wealth(mkt: &FiniteMarket, c: &[f64], target: usize) -> Result<Option<(f64, Vec<f64>)>> {
    let d = mkt.d();
    let mut obj = vec![0.0; d + 1];
    obj[d] = 1.0;
    let mut lp = LinearProgram::maximize(obj);
    lp.bounds(d, None, Some(1.0));
    for w in 0..mkt.m() {
        let mut row = mkt.stock_increments[w].clone();
        row.push(0.0);
        lp.add(row, Cmp::Ge, -c[w]);
    }
    let mut row = mkt.stock_increments[target].clone();
    row.push(-1.0);
    lp.add(row, Cmp::Ge, -c[target]);
    match lp.solve()? {
        LpOutcome::Optimal(s) => Ok(Some((s.objective, s.x[..d].to_vec()))),
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => Err(Error::Solver("wealth LP unbounded".into())),
    }
}

fn endowment_scale(mkt: &FiniteMarket, e: &Endowment) -> f64 {
    1.0 + e.x.abs() + e.q.iter().map(|v| v.abs()).sum::<f64>() * mkt.scale()
}

/// Build the reduced problem, or return `Ok(Err(result))` when the value is
/// decided without optimization.
fn reduce<'a>(
    mkt: &FiniteMarket,
    u: &'a UtilityFn,
    e: &Endowment,
    tol: &Tolerances,
) -> Result<std::result::Result<(Reduced<'a>, bool, Vec<usize>), ValueResult>> {
    let m = mkt.m();
    let d = mkt.d();
    let c = mkt.static_wealth(e);
    let feas = tol.feasibility * endowment_scale(mkt, e);

    let (interior, zero_states, h_start) = if d == 0 {
        let lowest = c.iter().cloned().fold(f64::INFINITY, f64::min);
        if lowest < -feas {
            return Ok(Err(ValueResult::minus_infinity(false)));
        }
        let zeros: Vec<usize> = (0..m).filter(|&w| c[w] <= feas).collect();
        (zeros.is_empty(), zeros, Vec::new())
    } else {
        // max s with c + Δh ≥ s on every state
        let mut obj = vec![0.0; d + 1];
        obj[d] = 1.0;
        let mut lp = LinearProgram::maximize(obj);
        lp.bounds(d, None, Some(1.0));
        for w in 0..m {
            let mut row = mkt.stock_increments[w].clone();
            row.push(-1.0);
            lp.add(row, Cmp::Ge, -c[w]);
        }
        let sol = match lp.solve()? {
            LpOutcome::Optimal(s) => s,
            _ => return Err(Error::Solver("feasibility LP failed".into())),
        };
        let s_star = sol.objective;
        if s_star < -feas {
            return Ok(Err(ValueResult::minus_infinity(false)));
        }
        if s_star > feas {
            (true, Vec::new(), sol.x[..d].to_vec())
        } else {
            let mut zeros = Vec::new();
            let mut hs: Vec<Vec<f64>> = Vec::new();
            for w in 0..m {
                match max_state_wealth(mkt, &c, w)? {
                    Some((best, h)) if best > feas => hs.push(h),
                    _ => zeros.push(w),
                }
            }
            let mut avg = vec![0.0; d];
            for h in &hs {
                for (a, v) in avg.iter_mut().zip(h) {
                    *a += v / hs.len().max(1) as f64;
                }
            }
            if hs.is_empty() {
                avg = sol.x[..d].to_vec();
            }
            (false, zeros, avg)
        }
    };

    if !zero_states.is_empty() && u.at_zero() == f64::NEG_INFINITY {
        let mut r = ValueResult::minus_infinity(true);
        r.zero_states = zero_states;
        return Ok(Err(r));
    }

    let active: Vec<usize> = (0..m).filter(|w| !zero_states.contains(w)).collect();
    let (h0, null) = if d == 0 {
        (DVector::zeros(0), DMatrix::zeros(0, 0))
    } else {
        let dz = DMatrix::from_fn(zero_states.len(), d, |r, i| mkt.stock_increments[zero_states[r]][i]);
        let mut h0 = DVector::from_vec(h_start);
        if !zero_states.is_empty() {
            // project onto Δ_Z h = -c_Z
            let resid = DVector::from_fn(zero_states.len(), |r, _| {
                c[zero_states[r]] + dot(&mkt.stock_increments[zero_states[r]], h0.as_slice())
            });
            let svd = dz.clone().svd(true, true);
            if let Ok(fix) = svd.solve(&resid, 1e-12) {
                h0 -= fix;
            }
        }
        (h0, null_space(&dz, d))
    };
    let k = null.ncols();
    let mut base = Vec::with_capacity(active.len());
    let mut rows = Vec::with_capacity(active.len());
    let mut probs = Vec::with_capacity(active.len());
    for &w in &active {
        let delta = &mkt.stock_increments[w];
        base.push(c[w] + dot(delta, h0.as_slice()));
        rows.push((0..k).map(|j| (0..d).map(|i| delta[i] * null[(i, j)]).sum()).collect());
        probs.push(mkt.probs[w]);
    }
    if base.iter().any(|&b| b <= 0.0) {
        return Err(Error::Numerical(
            "no strictly positive start on the admissible affine set".into(),
        ));
    }
    let constant = zero_states.iter().map(|&w| mkt.probs[w] * u.at_zero()).sum();
    Ok(Ok((
        Reduced {
            u,
            probs,
            base,
            rows,
            constant,
            h0,
            null,
        },
        !interior,
        zero_states,
    )))
}

fn finish(mkt: &FiniteMarket, u: &UtilityFn, e: &Endowment, red: &Reduced, t: &[f64], boundary: bool, zeros: Vec<usize>) -> ValueResult {
    let h = red.strategy(t);
    let mut wealth = mkt.wealth(e, &h);
    for &z in &zeros {
        wealth[z] = 0.0;
    }
    let value = expected_utility(mkt, u, &wealth);
    let multiplier = if zeros.is_empty() {
        Some(mkt.probs.iter().zip(&wealth).map(|(p, w)| p * u.derivative(*w)).sum())
    } else {
        None
    };
    ValueResult {
        value,
        optimal_strategy: Some(h),
        optimal_wealth: Some(wealth),
        multiplier,
        boundary,
        zero_states: zeros,
    }
}

/// `u(x, q) = sup_H E[U(x + HΔ + qF)]`.
pub fn value_u(mkt: &FiniteMarket, u: &UtilityFn, e: &Endowment, tol: &Tolerances) -> Result<ValueResult> {
    check_endowment(mkt.n(), e)?;
    let (red, boundary, zeros) = match reduce(mkt, u, e, tol)? {
        Ok(parts) => parts,
        Err(decided) => return Ok(decided),
    };
    let t = red.solve_from(vec![0.0; red.k()], tol)?;
    Ok(finish(mkt, u, e, &red, &t, boundary, zeros))
}

/// Optimal wealth vectors from `restarts` random strictly feasible starts.
pub fn value_u_restarts(
    mkt: &FiniteMarket,
    u: &UtilityFn,
    e: &Endowment,
    tol: &Tolerances,
    restarts: usize,
    seed: u64,
) -> Result<Vec<ValueResult>> {
    check_endowment(mkt.n(), e)?;
    let (red, boundary, zeros) = match reduce(mkt, u, e, tol)? {
        Ok(parts) => parts,
        Err(decided) => return Ok(vec![decided; restarts]),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = vec![0.0; red.k()];
    let mut out = Vec::with_capacity(restarts);
    for _ in 0..restarts {
        let start = red.random_start(&origin, &mut rng);
        let t = red.solve_from(start, tol)?;
        out.push(finish(mkt, u, e, &red, &t, boundary, zeros.clone()));
    }
    Ok(out)
}

fn check_endowment(n: usize, e: &Endowment) -> Result<()> {
    if e.q.len() != n {
        return Err(Error::Dimension(format!("endowment has {} claims, market has {n}", e.q.len())));
    }
    if !e.is_finite() {
        return Err(Error::Validation("endowment must be finite".into()));
    }
    Ok(())
}

/// Wealth `a + b s` at a graded node with the endpoint values clamped at zero.
pub(crate) fn density_wealth(p: SupportPoint, a: f64, b: f64, lo: f64, hi: f64) -> f64 {
    let w_lo = (a + b * lo).max(0.0);
    let w_hi = (a + b * hi).max(0.0);
    if p.from_lo < p.to_hi {
        w_lo + b * p.from_lo
    } else {
        w_hi - b * p.to_hi
    }
}

/// Endowment is on the edge of the support cone `a + b s ≥ 0` on `[lo, hi]`.
pub(crate) fn density_boundary(model: &DensityClaimModel, a: f64, b: f64) -> bool {
    let scale = 1.0 + a.abs() + b.abs() * model.lo.abs().max(model.hi.abs());
    let feas = 1e-12 * scale;
    (a + b * model.lo).abs() <= feas || (a + b * model.hi).abs() <= feas
}

/// `c ∫ g(a + b s) ρ(s) ds`, graded near the edge of the support cone.
pub(crate) fn density_expectation<G: Fn(f64, f64) -> f64>(
    model: &DensityClaimModel,
    a: f64,
    b: f64,
    g: G,
    doubled: bool,
) -> Result<f64> {
    let near_edge = b.abs() * model.lo.abs().max(model.hi.abs()) > 0.95 * a.abs() || density_boundary(model, a, b);
    if near_edge {
        model.quad_expectation_graded(|p| g(density_wealth(p, a, b, model.lo, model.hi), p.s), doubled)
    } else if doubled {
        model.quad_expectation_double(|s| g(a + b * s, s))
    } else {
        model.quad_expectation(|s| g(a + b * s, s))
    }
}

/// `u(a, b) = c ∫ U(a + b s) ρ(s) ds`; `-inf` when `a + b s < 0` somewhere on the support.
pub fn value_u_density(model: &DensityClaimModel, u: &UtilityFn, e: &Endowment, tol: &Tolerances) -> Result<ValueResult> {
    check_endowment(1, e)?;
    let (a, b) = (e.x, e.q[0]);
    let scale = 1.0 + a.abs() + b.abs() * model.lo.abs().max(model.hi.abs());
    let feas = tol.feasibility * scale;
    let ends = [a + b * model.lo, a + b * model.hi];
    if ends.iter().any(|&w| w < -feas) {
        return Ok(ValueResult::minus_infinity(false));
    }
    let boundary = ends.iter().any(|&w| w <= feas);
    let value = density_expectation(model, a, b, |w, _| u.value(w), false)?;
    let multiplier = if boundary {
        None
    } else {
        Some(density_expectation(model, a, b, |w, _| u.derivative(w), false)?)
    };
    Ok(ValueResult {
        value,
        optimal_strategy: None,
        optimal_wealth: None,
        multiplier,
        boundary,
        zero_states: Vec::new(),
    })
}

/// Primal and dual value functions at a pair `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualValues {
    pub x: f64,
    pub y: f64,
    pub w_of_x: f64,
    pub wtilde_of_y: f64,
    /// `inf_y (w̃(y) + x y)` and its minimizer.
    pub conjugate_inf: f64,
    pub y_opt: f64,
    /// `|w(x) - inf_y (w̃(y) + x y)|`.
    pub gap: f64,
}

/// `w̃(y) = min_{Q ∈ M} Σ p V(y Q / p)` by Newton on the martingale affine set.
/// Returns the value and the minimizing measure.
pub fn wtilde(mkt: &FiniteMarket, u: &UtilityFn, y: f64, tol: &Tolerances) -> Result<(f64, Vec<f64>)> {
    if !(y > 0.0) {
        return Err(Error::Precondition(format!("dual argument must be positive, got {y}")));
    }
    let m = mkt.m();
    let d = mkt.d();
    let start = match max_min_martingale(mkt, None)? {
        Some(w) if w.min_mass > tol.strict_positivity => w.q_measure,
        _ => return Err(Error::NoMartingaleMeasure),
    };
    let a = DMatrix::from_fn(d + 1, m, |r, w| if r == 0 { 1.0 } else { mkt.stock_increments[w][r - 1] });
    let null = null_space(&a, m);
    let k = null.ncols();
    let probs = &mkt.probs;
    let objective = |q: &[f64]| -> f64 {
        let mut acc = 0.0;
        for (qi, p) in q.iter().zip(probs) {
            if *qi <= 0.0 {
                return f64::INFINITY;
            }
            acc += p * u.conjugate(y * qi / p);
        }
        acc
    };
    let mut q = start;
    let mut f = objective(&q);
    for _ in 0..NEWTON_ITERS {
        if k == 0 {
            break;
        }
        // gradient and Hessian in reduced coordinates
        let gq = DVector::from_fn(m, |w, _| y * u.conjugate_derivative(y * q[w] / probs[w]));
        let hq = DVector::from_fn(m, |w, _| y * y / probs[w] * u.conjugate_second_derivative(y * q[w] / probs[w]));
        let g = null.transpose() * &gq;
        if g.amax() <= tol.optimality * 1e-2 {
            break;
        }
        let h = null.transpose() * DMatrix::from_diagonal(&hq) * &null;
        let step = -newton_direction(h, &g);
        let decrement = -g.dot(&step);
        if decrement <= 1e-24 * (1.0 + f.abs()) {
            break;
        }
        let dq = &null * &step;
        let mut alpha: f64 = 1.0;
        for w in 0..m {
            if dq[w] < 0.0 {
                alpha = alpha.min(STEP_TO_BOUNDARY * q[w] / -dq[w]);
            }
        }
        let mut accepted = false;
        for _ in 0..80 {
            let cand: Vec<f64> = (0..m).map(|w| q[w] + alpha * dq[w]).collect();
            let fc = objective(&cand);
            let settled = decrement < 1e-10 * (1.0 + f.abs()) && fc.is_finite();
            if settled || fc <= f - 1e-4 * alpha * decrement {
                q = cand;
                f = fc;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((f, q))
}

/// `w̃(y)` through a convex combination of martingale-polytope vertices,
/// minimized by accelerated projected gradient over the barycentric weights.
/// Intended for small markets (`m ≤ 8`) as a cross-check of [`wtilde`].
pub fn wtilde_by_vertices(mkt: &FiniteMarket, u: &UtilityFn, y: f64) -> Result<f64> {
    if mkt.m() > 8 {
        return Err(Error::Precondition("vertex route needs at most 8 states".into()));
    }
    let verts = martingale_vertices(mkt);
    if verts.is_empty() {
        return Err(Error::NoMartingaleMeasure);
    }
    let m = mkt.m();
    let nv = verts.len();
    let probs = &mkt.probs;
    let measure = |lam: &[f64]| -> Vec<f64> {
        (0..m).map(|w| lam.iter().zip(&verts).map(|(l, v)| l * v[w]).sum()).collect()
    };
    let objective = |lam: &[f64]| -> f64 {
        let q = measure(lam);
        let mut acc = 0.0;
        for (qi, p) in q.iter().zip(probs) {
            if *qi <= 0.0 {
                return f64::INFINITY;
            }
            acc += p * u.conjugate(y * qi / p);
        }
        acc
    };
    let gradient = |lam: &[f64]| -> Vec<f64> {
        let q = measure(lam);
        let gq: Vec<f64> = (0..m).map(|w| y * u.conjugate_derivative(y * q[w] / probs[w])).collect();
        verts.iter().map(|v| dot(v, &gq)).collect()
    };
    let mut lam = vec![1.0 / nv as f64; nv];
    let mut f = objective(&lam);
    if !f.is_finite() {
        return Err(Error::Numerical("barycenter of the martingale vertices is not equivalent".into()));
    }
    let mut z = lam.clone();
    let mut theta = 1.0f64;
    let mut step = 1.0;
    for _ in 0..20000 {
        let fz = objective(&z);
        let g = gradient(&z);
        let mut next;
        loop {
            next = project_simplex(&z.iter().zip(&g).map(|(a, b)| a - step * b).collect::<Vec<_>>());
            let fn_ = objective(&next);
            let diff: Vec<f64> = next.iter().zip(&z).map(|(a, b)| a - b).collect();
            let quad = fz + dot(&g, &diff) + dot(&diff, &diff) / (2.0 * step);
            if fn_.is_finite() && fn_ <= quad + 1e-15 * fz.abs() {
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                return Err(Error::Solver("vertex route line search failed".into()));
            }
        }
        let f_next = objective(&next);
        // restart when the objective goes up
        if f_next > f {
            theta = 1.0;
            z = lam.clone();
            continue;
        }
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let mom = (theta - 1.0) / theta_next;
        let mut cand: Vec<f64> = next.iter().zip(&lam).map(|(a, b)| a + mom * (a - b)).collect();
        if !objective(&cand).is_finite() {
            cand = next.clone();
        }
        let improvement = f - f_next;
        lam = next;
        f = f_next;
        z = cand;
        theta = theta_next;
        step *= 1.5;
        if improvement >= 0.0 && improvement < 1e-16 * (1.0 + f.abs()) {
            break;
        }
    }
    Ok(f)
}

fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (i, x) in s.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// `w(x)`, `w̃(y)` and the conjugate relation `w(x) = inf_y (w̃(y) + x y)`.
pub fn dual_values(mkt: &FiniteMarket, u: &UtilityFn, x: f64, y: f64, tol: &Tolerances) -> Result<DualValues> {
    if !(x > 0.0 && y > 0.0) {
        return Err(Error::Precondition(format!("need x > 0 and y > 0, got x={x}, y={y}")));
    }
    let primal = value_u(mkt, u, &Endowment::new(x, vec![0.0; mkt.n()]), tol)?;
    let w_of_x = primal.value;
    let (wtilde_of_y, _) = wtilde(mkt, u, y, tol)?;
    let centre = primal.multiplier.unwrap_or(y).ln();
    let mut err = None;
    let (log_y, conjugate_inf) = golden_section_min(
        |ly| match wtilde(mkt, u, ly.exp(), tol) {
            Ok((v, _)) => v + x * ly.exp(),
            Err(e) => {
                err = Some(e);
                f64::INFINITY
            }
        },
        centre - 5.0,
        centre + 5.0,
        1e-12,
    );
    if let Some(e) = err {
        return Err(e);
    }
    Ok(DualValues {
        x,
        y,
        w_of_x,
        wtilde_of_y,
        conjugate_inf,
        y_opt: log_y.exp(),
        gap: (w_of_x - conjugate_inf).abs(),
    })
}

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`.
/// Endpoints are evaluated too, so maxima on the boundary are found exactly.
pub fn golden_section_max<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, xtol: f64) -> (f64, f64) {
    let (x, v) = golden_section_min(|t| -f(t), lo, hi, xtol);
    (x, -v)
}

pub fn golden_section_min<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, xtol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let fa = f(a);
    let fb = f(b);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iters = 0;
    while (b - a).abs() > xtol * (1.0 + a.abs().max(b.abs())) && iters < 300 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        iters += 1;
    }
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    for (x, v) in [(lo, fa), (hi, fb)] {
        if v < best.1 {
            best = (x, v);
        }
    }
    best
}

/// Samples of `u` along rays shrinking to an endowment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UscProbe {
    pub base_value: f64,
    pub directions: Vec<UscRay>,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UscRay {
    pub direction: Vec<f64>,
    pub steps: Vec<f64>,
    pub values: Vec<f64>,
    /// Limit estimate from the two smallest steps (linear extrapolation),
    /// `-inf` when the values diverge downwards.
    pub limsup: f64,
    pub violated: bool,
}

/// Evaluate `u(e + t v)` for decreasing `t` and compare the limit with `u(e)`.
pub fn usc_probe<F: FnMut(&Endowment) -> Result<f64>>(
    mut value: F,
    e: &Endowment,
    directions: &[Vec<f64>],
    steps: &[f64],
    slack: f64,
) -> Result<UscProbe> {
    let base = value(e)?;
    let mut rays = Vec::new();
    for dir in directions {
        let mut values = Vec::with_capacity(steps.len());
        for &t in steps {
            values.push(value(&e.shifted(dir, t))?);
        }
        let n = values.len();
        let limsup = if n == 0 {
            f64::NEG_INFINITY
        } else if n == 1 || !values[n - 1].is_finite() || !values[n - 2].is_finite() {
            values[n - 1]
        } else {
            let (t1, t2) = (steps[n - 2], steps[n - 1]);
            let (v1, v2) = (values[n - 2], values[n - 1]);
            let diverging = base == f64::NEG_INFINITY && values.windows(2).all(|w| w[1] < w[0]);
            if diverging {
                f64::NEG_INFINITY
            } else {
                v2 - t2 * (v1 - v2) / (t1 - t2)
            }
        };
        let violated = if base == f64::NEG_INFINITY {
            limsup > f64::NEG_INFINITY
        } else {
            limsup > base + slack
        };
        rays.push(UscRay {
            direction: dir.clone(),
            steps: steps.to_vec(),
            values,
            limsup,
            violated,
        });
    }
    let violated = rays.iter().any(|r| r.violated);
    Ok(UscProbe {
        base_value: base,
        directions: rays,
        violated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_state() -> FiniteMarket {
        FiniteMarket::from_matrices(vec![0.5, 0.5], vec![vec![], vec![]], vec![vec![1.0], vec![-1.0]]).unwrap()
    }

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn two_state_closed_forms() {
        let mkt = two_state();
        let r = value_u(&mkt, &UtilityFn::log(), &Endowment::scalar(2.0, 0.5), &tol()).unwrap();
        assert_relative_eq!(r.value, 0.5 * 2.5f64.ln() + 0.5 * 1.5f64.ln(), epsilon = 1e-14);
        let r = value_u(&mkt, &UtilityFn::sqrt(), &Endowment::scalar(1.0, 1.0), &tol()).unwrap();
        assert_relative_eq!(r.value, 0.5 * 2f64.sqrt(), epsilon = 1e-14);
        assert!(r.boundary && r.multiplier.is_none());
        let r = value_u(&mkt, &UtilityFn::sqrt(), &Endowment::scalar(-1.0, 0.0), &tol()).unwrap();
        assert_eq!(r.value, f64::NEG_INFINITY);
        let r = value_u(&mkt, &UtilityFn::log(), &Endowment::scalar(1.0, 1.0), &tol()).unwrap();
        assert_eq!(r.value, f64::NEG_INFINITY);
    }

    #[test]
    fn one_stock_log_optimum() {
        // Up/down stock with increments ±1, p = (0.6, 0.4): log-optimal fraction 0.2.
        let mkt = FiniteMarket::from_matrices(vec![0.6, 0.4], vec![vec![1.0], vec![-1.0]], vec![vec![0.0], vec![0.0]]).unwrap();
        let r = value_u(&mkt, &UtilityFn::log(), &Endowment::scalar(1.0, 0.0), &tol()).unwrap();
        let h = r.optimal_strategy.unwrap()[0];
        assert_relative_eq!(h, 0.2, epsilon = 1e-10);
        assert_relative_eq!(r.value, 0.6 * 1.2f64.ln() + 0.4 * 0.8f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(r.multiplier.unwrap(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn boundary_with_forced_zero_state() {
        // Three states; stock moves only between the first two. With claim
        // payoff forcing zero in state 2, the stock position stays free.
        let mkt = FiniteMarket::from_matrices(
            vec![0.3, 0.3, 0.4],
            vec![vec![1.0], vec![-1.0], vec![0.0]],
            vec![vec![0.0], vec![0.0], vec![-1.0]],
        )
        .unwrap();
        let e = Endowment::scalar(1.0, 1.0);
        let r = value_u(&mkt, &UtilityFn::sqrt(), &e, &tol()).unwrap();
        assert!(r.boundary);
        assert_eq!(r.zero_states, vec![2]);
        // symmetric stock => H = 0, wealth (1, 1, 0)
        assert_relative_eq!(r.value, 0.6, epsilon = 1e-10);
        let r = value_u(&mkt, &UtilityFn::log(), &e, &tol()).unwrap();
        assert_eq!(r.value, f64::NEG_INFINITY);
    }

    #[test]
    fn restarts_agree() {
        let mkt = FiniteMarket::from_matrices(
            vec![0.2, 0.3, 0.5],
            vec![vec![1.0, 0.5], vec![-0.5, 1.0], vec![-0.2, -0.8]],
            vec![vec![1.0], vec![0.0], vec![-1.0]],
        )
        .unwrap();
        let e = Endowment::scalar(1.0, 0.2);
        let base = value_u(&mkt, &UtilityFn::power(0.3).unwrap(), &e, &tol()).unwrap();
        let runs = value_u_restarts(&mkt, &UtilityFn::power(0.3).unwrap(), &e, &tol(), 5, 11).unwrap();
        for r in runs {
            for (a, b) in r.optimal_wealth.unwrap().iter().zip(base.optimal_wealth.as_ref().unwrap()) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn density_values() {
        let model = DensityClaimModel::sec4();
        let s = UtilityFn::sqrt();
        let r = value_u_density(&model, &s, &Endowment::scalar(1.0, 0.0), &tol()).unwrap();
        assert_relative_eq!(r.value, 1.0, epsilon = 1e-12);
        let r = value_u_density(&model, &s, &Endowment::scalar(1.0, 1.0), &tol()).unwrap();
        assert_relative_eq!(r.value, model.normalizer * 8.0 / 3.0, epsilon = 1e-10);
        assert!(r.boundary);
        let r = value_u_density(&model, &s, &Endowment::scalar(1.0, 1.5), &tol()).unwrap();
        assert_eq!(r.value, f64::NEG_INFINITY);
    }

    #[test]
    fn duals_two_state() {
        let mkt = two_state();
        let dv = dual_values(&mkt, &UtilityFn::log(), 2.0, 0.7, &tol()).unwrap();
        assert_relative_eq!(dv.wtilde_of_y, -(0.7f64.ln()) - 1.0, epsilon = 1e-12);
        assert_relative_eq!(dv.w_of_x, 2f64.ln(), epsilon = 1e-12);
        assert!(dv.gap < 1e-10, "{dv:?}");
        let dv = dual_values(&mkt, &UtilityFn::sqrt(), 2.0, 0.7, &tol()).unwrap();
        assert_relative_eq!(dv.wtilde_of_y, 1.0 / 2.8, epsilon = 1e-12);
        assert!(dv.gap < 1e-10);
        assert_relative_eq!(dv.y_opt, 1.0 / (2.0 * 2f64.sqrt()), epsilon = 1e-6);
    }

    #[test]
    fn dual_routes_agree() {
        let mkt = FiniteMarket::from_matrices(
            vec![0.2, 0.3, 0.5],
            vec![vec![1.0], vec![-0.5], vec![-0.2]],
            vec![vec![1.0], vec![0.0], vec![-1.0]],
        )
        .unwrap();
        for u in [UtilityFn::log(), UtilityFn::sqrt(), UtilityFn::power(0.7).unwrap()] {
            let (a, _) = wtilde(&mkt, &u, 1.3, &tol()).unwrap();
            let b = wtilde_by_vertices(&mkt, &u, 1.3).unwrap();
            assert!((a - b).abs() < 1e-8, "{u:?}: {a} vs {b}");
        }
    }

    #[test]
    fn golden_section_on_parabola_and_edge() {
        let (x, v) = golden_section_max(|t| -(t - 0.3) * (t - 0.3), -1.0, 1.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-6 && v.abs() < 1e-12);
        let (x, _) = golden_section_max(|t| t, -1.0, 1.0, 1e-12);
        assert_eq!(x, 1.0);
    }

    #[test]
    fn usc_probe_log_diverges() {
        let mkt = two_state();
        let u = UtilityFn::log();
        let probe = usc_probe(
            |e| Ok(value_u(&mkt, &u, e, &tol())?.value),
            &Endowment::scalar(1.0, 1.0),
            &[vec![0.0, -1.0]],
            &[1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            1e-6,
        )
        .unwrap();
        assert!(!probe.violated);
        assert_eq!(probe.directions[0].limsup, f64::NEG_INFINITY);
    }
}
