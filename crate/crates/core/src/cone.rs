//! Polyhedral convex cones in halfspace form, possibly with auxiliary
//! variables still to be projected out.
//!
//! A cone is `{z : ∃h, A·(z, h) ≥ 0}`. With no auxiliary variables this is the
//! plain H-form `{z : A z ≥ 0}`. Projection is Fourier–Motzkin elimination
//! with LP-based redundancy removal after every step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{Cmp, LinearProgram, LpOutcome};
use crate::market::{dot, FiniteMarket};

/// Largest stock count eliminated explicitly when building the endowment cone.
pub const MAX_ELIMINATED_STOCKS: usize = 3;

const ROW_EPS: f64 = 1e-12;
const REDUNDANCY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyCone {
    /// Ambient dimension of `z`.
    pub dim: usize,
    /// Number of auxiliary variables `h` (0 for plain H-form).
    pub aux_dim: usize,
    /// Rows `a` of length `dim + aux_dim` meaning `a·(z, h) ≥ 0`.
    pub halfspaces: Vec<Vec<f64>>,
    /// Extreme rays / generators, when known.
    pub generators: Option<Vec<Vec<f64>>>,
}

impl PolyCone {
    pub fn from_halfspaces(dim: usize, rows: Vec<Vec<f64>>) -> Self {
        assert!(rows.iter().all(|r| r.len() == dim), "halfspace width");
        Self {
            dim,
            aux_dim: 0,
            halfspaces: rows,
            generators: None,
        }
    }

    /// `{z : ∃h, rows·(z, h) ≥ 0}`.
    pub fn lifted(dim: usize, aux_dim: usize, rows: Vec<Vec<f64>>) -> Self {
        assert!(rows.iter().all(|r| r.len() == dim + aux_dim), "lifted row width");
        Self {
            dim,
            aux_dim,
            halfspaces: rows,
            generators: None,
        }
    }

    /// The cone generated by `gens`, converted to H-form.
    pub fn from_generators(dim: usize, gens: Vec<Vec<f64>>) -> Self {
        let mut cone = Self::from_halfspaces(dim, cone_hull_halfspaces(dim, &gens));
        cone.generators = Some(gens);
        cone
    }

    /// The whole space `R^dim`.
    pub fn full(dim: usize) -> Self {
        Self::from_halfspaces(dim, Vec::new())
    }

    pub fn is_hform(&self) -> bool {
        self.aux_dim == 0
    }

    /// Project out auxiliary variables.
    pub fn to_hform(&self) -> Self {
        if self.is_hform() {
            return self.clone();
        }
        let rows = project(self.dim, self.aux_dim, self.halfspaces.clone(), Vec::new());
        Self {
            dim: self.dim,
            aux_dim: 0,
            halfspaces: rows,
            generators: self.generators.clone(),
        }
    }

    /// Unit-norm, deduplicated, irredundant rows (H-form only).
    pub fn normalized(&self) -> Self {
        let h = self.to_hform();
        let rows = remove_redundant(dedup_rows(h.halfspaces.iter().filter_map(|r| unit(r)).collect()), h.dim);
        Self {
            dim: h.dim,
            aux_dim: 0,
            halfspaces: rows,
            generators: h.generators,
        }
    }

    /// Smallest normalized slack `min_i a_i·(z,h)/|a_i|`, maximized over `h`
    /// and capped at 1. Negative when `z` lies outside.
    pub fn margin(&self, z: &[f64]) -> Result<f64> {
        assert_eq!(z.len(), self.dim);
        if self.halfspaces.is_empty() {
            return Ok(1.0);
        }
        if self.is_hform() {
            return Ok(self
                .halfspaces
                .iter()
                .map(|a| {
                    let n = norm(a);
                    if n < ROW_EPS {
                        1.0
                    } else {
                        dot(a, z) / n
                    }
                })
                .fold(1.0, f64::min));
        }
        // Variables: h (aux_dim), s.
        let k = self.aux_dim;
        let mut obj = vec![0.0; k + 1];
        obj[k] = 1.0;
        let mut lp = LinearProgram::maximize(obj);
        lp.bounds(k, None, Some(1.0));
        for a in &self.halfspaces {
            let n = norm(a).max(ROW_EPS);
            let mut coeffs: Vec<f64> = a[self.dim..].to_vec();
            coeffs.push(-n);
            lp.add(coeffs, Cmp::Ge, -dot(&a[..self.dim], z));
        }
        match lp.solve()? {
            LpOutcome::Optimal(s) => Ok(s.objective),
            LpOutcome::Infeasible => Err(Error::Solver("margin LP infeasible".into())),
            LpOutcome::Unbounded => Ok(1.0),
        }
    }

    pub fn contains(&self, z: &[f64], tol: f64) -> Result<bool> {
        Ok(self.margin(z)? >= -tol)
    }

    /// Add the linear subspace constraint `normal·z = 0`.
    pub fn intersect_orthogonal(&self, normal: &[f64]) -> Self {
        assert_eq!(normal.len(), self.dim);
        let mut rows = self.halfspaces.clone();
        let mut pos = normal.to_vec();
        pos.extend(std::iter::repeat_n(0.0, self.aux_dim));
        let neg: Vec<f64> = pos.iter().map(|v| -v).collect();
        rows.push(pos);
        rows.push(neg);
        Self {
            dim: self.dim,
            aux_dim: self.aux_dim,
            halfspaces: rows,
            generators: None,
        }
    }

    /// Maximize `c·z` over the cone intersected with the box `|z_i| ≤ 1`.
    pub fn support_in_box(&self, c: &[f64]) -> Result<(f64, Vec<f64>)> {
        let nv = self.dim + self.aux_dim;
        let mut obj = c.to_vec();
        obj.extend(std::iter::repeat_n(0.0, self.aux_dim));
        let mut lp = LinearProgram::maximize(obj);
        for i in 0..self.dim {
            lp.bounds(i, Some(-1.0), Some(1.0));
        }
        for a in &self.halfspaces {
            lp.add(a.clone(), Cmp::Ge, 0.0);
        }
        debug_assert_eq!(lp.num_vars(), nv);
        match lp.solve()? {
            LpOutcome::Optimal(s) => Ok((s.objective, s.x[..self.dim].to_vec())),
            other => Err(Error::Solver(format!("box support LP: {other:?}"))),
        }
    }

    /// A nonzero element of the cone (max-norm 1) if one exists beyond `tol`.
    pub fn nonzero_element(&self, tol: f64) -> Result<Option<Vec<f64>>> {
        for i in 0..self.dim {
            for sign in [1.0, -1.0] {
                let mut c = vec![0.0; self.dim];
                c[i] = sign;
                let (val, z) = self.support_in_box(&c)?;
                if val > tol {
                    let m = z.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
                    return Ok(Some(z.iter().map(|v| v / m).collect()));
                }
            }
        }
        Ok(None)
    }

    /// True when the cone is `{0}` up to `tol`.
    pub fn is_trivial(&self, tol: f64) -> Result<bool> {
        Ok(self.nonzero_element(tol)?.is_none())
    }

    /// Largest `t` with `±z ∈ cone`, `|z|_∞ ≤ 1`: zero iff the cone is pointed.
    pub fn lineality_extent(&self) -> Result<f64> {
        let mut rows = self.halfspaces.clone();
        rows.extend(self.halfspaces.iter().map(|a| {
            // -z with its own auxiliary copy: rows act on (z, h2) as a·(-z, h2).
            let mut r: Vec<f64> = a[..self.dim].iter().map(|v| -v).collect();
            r.extend_from_slice(&a[self.dim..]);
            r
        }));
        // Stack auxiliaries: first block uses h1, second h2.
        let k = self.aux_dim;
        let width = self.dim + 2 * k;
        let n_rows = self.halfspaces.len();
        let stacked: Vec<Vec<f64>> = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let mut s = vec![0.0; width];
                s[..self.dim].copy_from_slice(&r[..self.dim]);
                let off = if i < n_rows { self.dim } else { self.dim + k };
                s[off..off + k].copy_from_slice(&r[self.dim..]);
                s
            })
            .collect();
        let both = PolyCone::lifted(self.dim, 2 * k, stacked);
        let mut best = 0.0f64;
        for i in 0..self.dim {
            let mut c = vec![0.0; self.dim];
            c[i] = 1.0;
            best = best.max(both.support_in_box(&c)?.0);
            c[i] = -1.0;
            best = best.max(both.support_in_box(&c)?.0);
        }
        Ok(best)
    }

    /// Every halfspace of `self` holds on `other` (both H-form after projection).
    pub fn contains_cone(&self, other: &PolyCone, tol: f64) -> Result<bool> {
        let me = self.to_hform();
        for a in &me.halfspaces {
            let n = norm(a);
            if n < ROW_EPS {
                continue;
            }
            let neg: Vec<f64> = a.iter().map(|v| -v / n).collect();
            let (val, _) = other.support_in_box(&neg)?;
            if val > tol {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn approx_eq(&self, other: &PolyCone, tol: f64) -> Result<bool> {
        Ok(self.contains_cone(other, tol)? && other.contains_cone(self, tol)?)
    }

    /// Generators of the cone: the halfspace rows of its polar.
    pub fn generators(&self) -> Vec<Vec<f64>> {
        if let Some(g) = &self.generators {
            return g.clone();
        }
        polar_cone(self).halfspaces
    }

    /// Rows (unit norm) active at `z`, i.e. `a·z ≈ 0`: generators of the normal cone.
    pub fn active_rows(&self, z: &[f64], tol: f64) -> Vec<Vec<f64>> {
        let h = self.normalized();
        h.halfspaces
            .into_iter()
            .filter(|a| dot(a, z).abs() <= tol)
            .collect()
    }
}

/// The endowment cone `{(x, q) : ∃H, x + H·Δ[w] + q·F[w] ≥ 0 for all w}`.
///
/// Stocks are eliminated by Fourier–Motzkin when `d ≤ 3`; otherwise the cone
/// is kept in lifted form and queries go through LPs.
pub fn build_kbar(mkt: &FiniteMarket) -> Result<PolyCone> {
    let n = mkt.n();
    let d = mkt.d();
    let rows: Vec<Vec<f64>> = (0..mkt.m())
        .map(|w| {
            let mut r = Vec::with_capacity(1 + n + d);
            r.push(1.0);
            r.extend_from_slice(&mkt.claim_payoffs[w]);
            r.extend_from_slice(&mkt.stock_increments[w]);
            r
        })
        .collect();
    if rows.iter().any(|r| r.len() != 1 + n + d) {
        return Err(Error::Dimension("market rows have inconsistent widths".into()));
    }
    let lifted = PolyCone::lifted(n + 1, d, rows);
    if d <= MAX_ELIMINATED_STOCKS {
        Ok(lifted.to_hform().normalized())
    } else {
        Ok(lifted)
    }
}

/// `{v : v·w ≥ 0 for all w ∈ K}`.
pub fn polar_cone(k: &PolyCone) -> PolyCone {
    if k.halfspaces.is_empty() {
        if let Some(gens) = &k.generators {
            return PolyCone::from_halfspaces(k.dim, gens.clone());
        }
        // Polar of the whole space is {0}.
        let mut rows = Vec::new();
        for i in 0..k.dim {
            let mut e = vec![0.0; k.dim];
            e[i] = 1.0;
            rows.push(e.clone());
            e[i] = -1.0;
            rows.push(e);
        }
        return PolyCone::from_halfspaces(k.dim, rows);
    }
    let h = k.to_hform();
    PolyCone::from_generators(k.dim, h.halfspaces)
}

/// `K ∩ (1,p)^⊥`, the recession cone of every price section of `K`.
pub fn section_recession_cone(k: &PolyCone, prices: &[f64]) -> PolyCone {
    let mut normal = Vec::with_capacity(prices.len() + 1);
    normal.push(1.0);
    normal.extend_from_slice(prices);
    k.intersect_orthogonal(&normal)
}

/// Halfspaces of `cone(gens)`: project `{(v, λ) : v = Σ λ_i g_i, λ ≥ 0}` onto `v`.
fn cone_hull_halfspaces(dim: usize, gens: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = gens.len();
    let width = dim + k;
    let mut ineqs = Vec::with_capacity(k);
    for i in 0..k {
        let mut r = vec![0.0; width];
        r[dim + i] = 1.0;
        ineqs.push(r);
    }
    let mut eqs = Vec::with_capacity(dim);
    for j in 0..dim {
        let mut r = vec![0.0; width];
        r[j] = 1.0;
        for (i, g) in gens.iter().enumerate() {
            r[dim + i] = -g[j];
        }
        eqs.push(r);
    }
    project(dim, k, ineqs, eqs)
}

/// Eliminate the trailing `aux` coordinates from `{w : I w ≥ 0, E w = 0}`.
fn project(dim: usize, aux: usize, mut ineqs: Vec<Vec<f64>>, mut eqs: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut aux_left = aux;
    // Substitute equalities that involve auxiliaries.
    loop {
        let width = dim + aux_left;
        let pick = eqs.iter().enumerate().find_map(|(i, e)| {
            let (j, v) = e[dim..width]
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))?;
            (v.abs() > 1e-12 * norm(e).max(1.0)).then_some((i, dim + j))
        });
        let Some((ei, col)) = pick else { break };
        let e = eqs.swap_remove(ei);
        let eliminate = |r: &mut Vec<f64>| {
            let f = r[col] / e[col];
            if f != 0.0 {
                for (rv, ev) in r.iter_mut().zip(&e) {
                    *rv -= f * ev;
                }
            }
            r[col] = 0.0;
            r.remove(col);
        };
        ineqs.iter_mut().for_each(eliminate);
        eqs.iter_mut().for_each(eliminate);
        aux_left -= 1;
        ineqs = dedup_rows(ineqs.iter().filter_map(|r| unit(r)).collect());
    }
    // Remaining equalities live on z only.
    for e in eqs {
        if let Some(u) = unit(&e[..dim]) {
            ineqs.push(pad(&u, aux_left));
            ineqs.push(pad(&u.iter().map(|v| -v).collect::<Vec<_>>(), aux_left));
        }
    }
    ineqs = remove_redundant(dedup_rows(ineqs.iter().filter_map(|r| unit(r)).collect()), dim + aux_left);
    while aux_left > 0 {
        let col = dim + aux_left - 1;
        let (mut pos, mut neg, mut zero) = (Vec::new(), Vec::new(), Vec::new());
        for r in ineqs {
            if r[col] > ROW_EPS {
                pos.push(r);
            } else if r[col] < -ROW_EPS {
                neg.push(r);
            } else {
                zero.push(r);
            }
        }
        let mut next: Vec<Vec<f64>> = zero
            .into_iter()
            .map(|mut r| {
                r.truncate(col);
                r
            })
            .collect();
        for p in &pos {
            for n in &neg {
                let (a, b) = (-n[col], p[col]);
                let combo: Vec<f64> = (0..col).map(|i| a * p[i] + b * n[i]).collect();
                next.push(combo);
            }
        }
        aux_left -= 1;
        ineqs = remove_redundant(
            dedup_rows(next.iter().filter_map(|r| unit(r)).collect()),
            dim + aux_left,
        );
    }
    ineqs
}

fn pad(r: &[f64], extra: usize) -> Vec<f64> {
    let mut v = r.to_vec();
    v.extend(std::iter::repeat_n(0.0, extra));
    v
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn unit(a: &[f64]) -> Option<Vec<f64>> {
    let n = norm(a);
    if n < ROW_EPS {
        None
    } else {
        Some(
            a.iter()
                .map(|v| {
                    let u = v / n;
                    if u.abs() < 1e-15 {
                        0.0
                    } else {
                        u
                    }
                })
                .collect(),
        )
    }
}

fn dedup_rows(mut rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    for r in rows {
        let dup = out
            .iter()
            .any(|o| o.iter().zip(&r).all(|(x, y)| (x - y).abs() < 1e-10));
        if !dup {
            out.push(r);
        }
    }
    out
}

/// Drop rows implied by the others: `a` is redundant when
/// `min a·w` over the remaining cone intersected with a unit box is 0.
fn remove_redundant(rows: Vec<Vec<f64>>, width: usize) -> Vec<Vec<f64>> {
    let mut kept = rows;
    let mut i = 0;
    while i < kept.len() {
        let candidate = kept[i].clone();
        let mut lp = LinearProgram::minimize(candidate.clone());
        for j in 0..width {
            lp.bounds(j, Some(-1.0), Some(1.0));
        }
        for (k, r) in kept.iter().enumerate() {
            if k != i {
                lp.add(r.clone(), Cmp::Ge, 0.0);
            }
        }
        let redundant = match lp.solve() {
            Ok(LpOutcome::Optimal(s)) => s.objective >= -REDUNDANCY_TOL,
            _ => false,
        };
        if redundant {
            kept.remove(i);
        } else {
            i += 1;
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state() -> FiniteMarket {
        FiniteMarket::from_matrices(vec![0.5, 0.5], vec![vec![], vec![]], vec![vec![1.0], vec![-1.0]]).unwrap()
    }

    fn same_rows(a: &PolyCone, expected: &[[f64; 2]]) -> bool {
        let want = PolyCone::from_halfspaces(2, expected.iter().map(|r| r.to_vec()).collect());
        a.approx_eq(&want, 1e-9).unwrap()
    }

    #[test]
    fn kbar_two_state_no_stocks() {
        let k = build_kbar(&two_state()).unwrap();
        assert!(k.is_hform());
        assert!(same_rows(&k, &[[1.0, 1.0], [1.0, -1.0]]));
        assert_eq!(k.halfspaces.len(), 2);
    }

    #[test]
    fn kbar_replicable_claim_is_halfplane() {
        let mkt = FiniteMarket::from_matrices(
            vec![0.5, 0.5],
            vec![vec![1.0], vec![-1.0]],
            vec![vec![1.0], vec![-1.0]],
        )
        .unwrap();
        let k = build_kbar(&mkt).unwrap();
        assert!(same_rows(&k, &[[1.0, 0.0]]));
        assert!(k.lineality_extent().unwrap() > 0.5);
    }

    #[test]
    fn lifted_and_projected_agree_on_membership() {
        let mkt = FiniteMarket::from_matrices(
            vec![0.2, 0.3, 0.5],
            vec![vec![1.0], vec![-0.5], vec![0.1]],
            vec![vec![2.0], vec![0.0], vec![-1.0]],
        )
        .unwrap();
        let lifted = PolyCone::lifted(
            2,
            1,
            (0..3)
                .map(|w| vec![1.0, mkt.claim_payoffs[w][0], mkt.stock_increments[w][0]])
                .collect(),
        );
        let h = build_kbar(&mkt).unwrap();
        for (x, q) in [(1.0, 0.3), (0.1, 2.0), (0.5, -0.4), (-0.1, 0.0), (1.0, -3.0)] {
            let a = lifted.contains(&[x, q], 1e-9).unwrap();
            let b = h.contains(&[x, q], 1e-9).unwrap();
            assert_eq!(a, b, "({x},{q})");
        }
    }

    #[test]
    fn polar_examples() {
        let k = PolyCone::from_halfspaces(2, vec![vec![1.0, 1.0], vec![1.0, -1.0]]);
        assert!(same_rows(&polar_cone(&k), &[[1.0, 1.0], [1.0, -1.0]]));
        let orthant = PolyCone::from_halfspaces(2, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(same_rows(&polar_cone(&orthant), &[[1.0, 0.0], [0.0, 1.0]]));
        let half = PolyCone::from_halfspaces(2, vec![vec![1.0, 0.0]]);
        let p = polar_cone(&half);
        assert!(same_rows(&p, &[[1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]));
    }

    #[test]
    fn polar_of_full_space_is_origin() {
        let p = polar_cone(&PolyCone::full(3));
        assert!(p.is_trivial(1e-12).unwrap());
    }

    #[test]
    fn recession_cone_examples() {
        let k = PolyCone::from_halfspaces(2, vec![vec![1.0, 1.0], vec![1.0, -1.0]]);
        assert!(section_recession_cone(&k, &[0.0]).is_trivial(1e-9).unwrap());
        let ray = section_recession_cone(&k, &[-1.0]).nonzero_element(1e-9).unwrap().unwrap();
        assert!((ray[0] - 1.0).abs() < 1e-12 && (ray[1] - 1.0).abs() < 1e-12, "{ray:?}");
        assert!(section_recession_cone(&k, &[-1.0]).contains(&[2.0, 2.0], 1e-12).unwrap());
        let half = PolyCone::from_halfspaces(2, vec![vec![1.0, 0.0]]);
        let line = section_recession_cone(&half, &[0.0]);
        assert!(line.contains(&[0.0, 5.0], 1e-12).unwrap());
        assert!(line.contains(&[0.0, -5.0], 1e-12).unwrap());
        assert!(!line.contains(&[1.0, 0.0], 1e-9).unwrap());
    }

    #[test]
    fn interior_point_and_active_rows() {
        let k = build_kbar(&two_state()).unwrap();
        assert!(k.margin(&[1.0, 0.0]).unwrap() > 0.5);
        let act = k.active_rows(&[1.0, 1.0], 1e-9);
        assert_eq!(act.len(), 1);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((act[0][0] - r).abs() < 1e-12 && (act[0][1] + r).abs() < 1e-12, "{act:?}");
        assert!(k.lineality_extent().unwrap() < 1e-12);
    }

    #[test]
    fn generators_satisfy_halfspaces() {
        let k = PolyCone::from_halfspaces(3, vec![vec![1.0, 1.0, 0.0], vec![1.0, -1.0, 0.0], vec![1.0, 0.0, 1.0], vec![1.0, 0.0, -1.0]]);
        for g in k.generators() {
            for a in &k.halfspaces {
                assert!(dot(a, &g) >= -1e-9);
            }
        }
    }
}
